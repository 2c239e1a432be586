use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synth::MANIFEST_FILE;
use crate::dataset::{DatasetManifest, Role};
use crate::eval::percent;
use crate::pipeline::{
    evaluate, fuse_modalities, fv_encode_manifest, fv_fit_manifest, pool_videos, predict_scores, train_events,
    EvalTask, FeatureSource, ModalityScores, RunConfig,
};
use crate::pooling::{PoolMode, RegionScheme};
use crate::svm::KernelKind;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    /// Pooled CNN features.
    Cnn,
    /// Fisher vectors of the descriptor stream.
    Fisher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub name: String,
    pub modality: Modality,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRow {
    pub name: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigMatrix {
    pub rows: Vec<MatrixRow>,
    #[serde(default)]
    pub fusions: Vec<FusionRow>,
}

impl ConfigMatrix {
    /// Baseline (SP8, max/max, ℓ2, RBF) plus one-factor variations, the
    /// Fisher-vector stream, and the fusion of baseline with Fisher vectors.
    pub fn standard(seed: u64) -> Self {
        let base = RunConfig {
            seed,
            gmm_components: 8,
            ..Default::default()
        };
        let row = |name: &str, modality, config| MatrixRow {
            name: name.to_string(),
            modality,
            config,
        };
        ConfigMatrix {
            rows: vec![
                row("sp8-max-rbf", Modality::Cnn, base.clone()),
                row("none-max-rbf", Modality::Cnn, RunConfig { regions: RegionScheme::None, ..base.clone() }),
                row(
                    "sp8-avg-rbf",
                    Modality::Cnn,
                    RunConfig { temporal: PoolMode::Avg, ..base.clone() },
                ),
                row(
                    "sp8-max-linear",
                    Modality::Cnn,
                    RunConfig { kernel: KernelKind::Linear, ..base.clone() },
                ),
                row("fv-rbf", Modality::Fisher, base),
            ],
            fusions: vec![FusionRow {
                name: "fusion".into(),
                members: vec!["sp8-max-rbf".into(), "fv-rbf".into()],
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowResult {
    pub name: String,
    pub layer: String,
    pub dim: usize,
    pub regions: String,
    pub pooling: String,
    pub norm: String,
    pub svm: String,
    pub map: f64,
    pub per_event: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Delta {
    pub from: String,
    pub to: String,
    /// `map(to) − map(from)` in percentage points.
    pub points: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub rows: Vec<RowResult>,
    pub deltas: Vec<Delta>,
}

impl Report {
    pub fn map_of(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.name == name).map(|r| r.map)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:<8} {:>7} {:<11} {:<8} {:<5} {:<7} {:>8}",
            "run", "Layer", "Dim", "SP", "Pool", "Norm", "SVM", "mAP"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<16} {:<8} {:>7} {:<11} {:<8} {:<5} {:<7} {:>8}",
                r.name,
                r.layer,
                r.dim,
                r.regions,
                r.pooling,
                r.norm,
                r.svm,
                percent(r.map)
            );
        }
        if !self.deltas.is_empty() {
            out.push('\n');
            for d in &self.deltas {
                let _ = writeln!(out, "{:>+7.2}  {} -> {}", d.points, d.from, d.to);
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct RowRun {
    result: RowResult,
    scores: ModalityScores,
}

fn run_row(row: &MatrixRow, manifest: &DatasetManifest, dir: &Path) -> Result<RowRun> {
    let (store, failures) = match row.modality {
        Modality::Cnn => {
            let (store, _, report) = pool_videos(&row.config, manifest, dir)?;
            (store, report.failures)
        }
        Modality::Fisher => {
            let model = fv_fit_manifest(&row.config, manifest, dir)?;
            let (store, report) = fv_encode_manifest(&model, manifest, dir)?;
            (store, report.failures)
        }
    };
    if let Some((id, e)) = failures.first() {
        return Err(Error::data(format!("row {}: {id}: {e}", row.name)));
    }
    let trained = train_events(&row.config, manifest, &store)?;
    let test_ids = manifest.ids_with_role(Role::Test);
    let test = predict_scores(&trained.models, &store, &test_ids)?;
    let eval = evaluate(&test, manifest, EvalTask::Map)?;

    let (layer, regions, pooling, norm) = match &store.source {
        FeatureSource::Pooled(p) => (
            p.layer.to_string(),
            p.regions.to_string(),
            format!("{}/{}", p.spatial, p.temporal),
            p.norm.map_or_else(|| "-".into(), |n| n.to_string()),
        ),
        FeatureSource::Fisher { components, .. } => ("desc".into(), format!("fv-k{components}"), "-".into(), "pn+l2".into()),
    };
    Ok(RowRun {
        result: RowResult {
            name: row.name.clone(),
            layer,
            dim: store.dim,
            regions,
            pooling,
            norm,
            svm: row.config.kernel.to_string(),
            map: eval.map.expect("map task"),
            per_event: eval.per_event.iter().filter_map(|e| e.ap.map(|a| (e.event.clone(), a))).collect(),
        },
        scores: ModalityScores {
            name: row.name.clone(),
            train: trained.oof,
            test,
        },
    })
}

/// Runs every matrix row end to end on the corpus in `dir`, then each
/// fusion row over its members' scores.
pub fn run_report(dir: &Path, matrix: &ConfigMatrix) -> Result<Report> {
    let manifest = DatasetManifest::load(&dir.join(MANIFEST_FILE))?;
    run_report_with(&manifest, dir, matrix)
}

pub fn run_report_with(manifest: &DatasetManifest, dir: &Path, matrix: &ConfigMatrix) -> Result<Report> {
    if matrix.rows.is_empty() {
        return Err(Error::invalid("config matrix has no rows"));
    }
    let mut runs: Vec<RowRun> = Vec::new();
    for row in &matrix.rows {
        log::info!("running {}", row.name);
        runs.push(run_row(row, manifest, dir)?);
    }
    let mut rows: Vec<RowResult> = runs.iter().map(|r| r.result.clone()).collect();

    for fusion in &matrix.fusions {
        let members = fusion
            .members
            .iter()
            .map(|m| {
                runs.iter()
                    .find(|r| &r.result.name == m)
                    .map(|r| r.scores.clone())
                    .ok_or_else(|| Error::invalid(format!("fusion {} names unknown row {m}", fusion.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        let anchor = matrix
            .rows
            .iter()
            .find(|r| r.name == fusion.members[0])
            .expect("member resolved above");
        let cfg = &anchor.config;
        let fused = fuse_modalities(&members, manifest, cfg.grid_step, cfg.folds, cfg.seed)?;
        let eval = evaluate(&fused.fused_test, manifest, EvalTask::Map)?;
        rows.push(RowResult {
            name: fusion.name.clone(),
            layer: "-".into(),
            dim: 0,
            regions: "-".into(),
            pooling: "-".into(),
            norm: "-".into(),
            svm: format!("late({})", members.len()),
            map: eval.map.expect("map task"),
            per_event: eval.per_event.iter().filter_map(|e| e.ap.map(|a| (e.event.clone(), a))).collect(),
        });
    }

    let mut deltas = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            deltas.push(Delta {
                from: rows[i].name.clone(),
                to: rows[j].name.clone(),
                points: 100.0 * (rows[j].map - rows[i].map),
            });
        }
    }
    Ok(Report { rows, deltas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{synth_to_dir, SynthSpec};

    fn corpus() -> (tempfile::TempDir, DatasetManifest) {
        let spec = SynthSpec {
            events: 2,
            train_positives: 8,
            train_near_misses: 3,
            background: 24,
            test_positives: 5,
            test_near_misses: 2,
            test_background: 8,
            frames: 6,
            dim: 32,
            descriptors_per_video: 12,
            descriptor_dim: 8,
            seed: 3,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let data = synth_to_dir(&spec, dir.path()).unwrap();
        (dir, data.manifest)
    }

    fn row(name: &str, modality: Modality, config: RunConfig) -> MatrixRow {
        MatrixRow { name: name.into(), modality, config }
    }

    #[test]
    fn one_table_row_per_matrix_row() {
        let (dir, m) = corpus();
        let matrix = ConfigMatrix {
            rows: vec![
                row("a", Modality::Cnn, RunConfig::default()),
                row("b", Modality::Cnn, RunConfig { temporal: PoolMode::Avg, ..Default::default() }),
            ],
            fusions: vec![],
        };
        let report = run_report_with(&m, dir.path(), &matrix).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.deltas.len(), 1);
        let table = report.to_table();
        assert_eq!(table.lines().filter(|l| l.starts_with("a ") || l.starts_with("b ")).count(), 2);
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json["rows"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn identical_rows_give_identical_map() {
        let (dir, m) = corpus();
        let matrix = ConfigMatrix {
            rows: vec![
                row("x", Modality::Cnn, RunConfig::default()),
                row("y", Modality::Cnn, RunConfig::default()),
            ],
            fusions: vec![],
        };
        let report = run_report_with(&m, dir.path(), &matrix).unwrap();
        assert_eq!(report.map_of("x"), report.map_of("y"));
        assert_eq!(report.deltas[0].points, 0.0);
    }

    #[test]
    fn fusion_row_follows_modalities() {
        let (dir, m) = corpus();
        let fv = RunConfig { gmm_components: 4, ..Default::default() };
        let matrix = ConfigMatrix {
            rows: vec![row("cnn", Modality::Cnn, RunConfig::default()), row("fv", Modality::Fisher, fv)],
            fusions: vec![FusionRow { name: "both".into(), members: vec!["cnn".into(), "fv".into()] }],
        };
        let report = run_report_with(&m, dir.path(), &matrix).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert_eq!(report.rows[2].name, "both");
        assert!(report.map_of("both").unwrap() > 0.0);

        let bad = ConfigMatrix {
            fusions: vec![FusionRow { name: "f".into(), members: vec!["cnn".into(), "nope".into()] }],
            ..matrix
        };
        assert!(run_report_with(&m, dir.path(), &bad).is_err());
        assert!(run_report_with(&m, dir.path(), &ConfigMatrix { rows: vec![], fusions: vec![] }).is_err());
    }

    #[test]
    fn standard_matrix_round_trips() {
        let m = ConfigMatrix::standard(4);
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<ConfigMatrix>(&text).unwrap(), m);
        assert!(m.rows.iter().all(|r| r.config.seed == 4));
    }
}
