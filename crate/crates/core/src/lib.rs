//! Video event detection on top of image-trained CNN features.
//!
//! The crate covers everything downstream of CNN inference: frame sampling
//! and patch geometry, spatial-pyramid and objectness pooling, temporal
//! pooling, normalization and PCA, kernel SVMs trained by SMO with Platt
//! calibration, Fisher-vector encoding of low-level descriptors,
//! cross-validated late fusion, and AP/mAP/accuracy evaluation.
//!
//! [`pipeline`] wires these pieces to on-disk formats and batch commands;
//! [`harness`] generates synthetic corpora and runs comparison matrices.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod fisher;
pub mod fusion;
pub mod geometry;
pub mod harness;
pub mod pipeline;
pub mod pooling;
pub mod svm;
pub mod transform;

mod rng;

pub use error::{Error, Result};
