//! Synthetic corpora with planted spatial and temporal structure, and an
//! experiment runner that compares pipeline configurations on them.

mod report;
mod synth;

pub use report::{run_report, run_report_with, ConfigMatrix, Delta, FusionRow, MatrixRow, Modality, Report, RowResult};
pub use synth::{generate, synth_to_dir, write_dataset, SynthData, SynthSpec, MANIFEST_FILE};
