//! Gaussian-mixture Fisher vectors for low-level descriptor streams.

mod encode;
mod gmm;

pub use encode::{fisher_gradients, fv_dim, fv_encode, power_normalize, FisherVector};
pub use gmm::{gmm_fit, gmm_posteriors, GmmFit, GmmModel, GmmParams};
