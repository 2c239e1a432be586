//! Video-level feature normalization and PCA.

mod normalize;
mod pca;

pub(crate) use normalize::l2_norm;
pub use normalize::{normalize, NormScheme};
pub use pca::{pca_fit, pca_transform, PcaModel};
