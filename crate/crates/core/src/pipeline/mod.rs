//! Batch commands over manifests and on-disk artifacts.
//!
//! Per-video work runs on the rayon pool and collects failures instead of
//! aborting; every output file is written to a temporary sibling and renamed
//! into place.

mod commands;
mod config;
pub mod formats;

pub use commands::*;
pub use config::RunConfig;
pub use formats::{FeatureSource, FeatureStore, ProposalList, ScoreTable};
