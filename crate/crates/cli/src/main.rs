//! `vidcnn`: batch driver for pooling, training, prediction, fusion and
//! evaluation of video event detectors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vidcnn::harness::{run_report, synth_to_dir, ConfigMatrix, SynthSpec};
use vidcnn::pipeline::{
    cmd_eval, cmd_fuse, cmd_fv_encode, cmd_fv_fit, cmd_pca, cmd_pool, cmd_predict, cmd_train, cmd_validate, formats,
    layout, BatchReport, EvalTask, ModalityFiles, ProposalList, RunConfig,
};
use vidcnn::pooling::{Layer, PoolMode, RegionScheme};
use vidcnn::svm::KernelKind;
use vidcnn::transform::NormScheme;
use vidcnn::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "vidcnn", version, about = "Video event detection from per-frame CNN features")]
struct Cli {
    /// Thread budget for per-video and per-event work.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Log progress at info level.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pool per-frame patch features into one vector per video.
    Pool {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Directory the manifest's feature paths are relative to.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one calibrated SVM per event.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Pooled feature store.
        #[arg(long)]
        features: PathBuf,
        /// Output directory for model files and out-of-fold scores.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score videos with trained models.
    Predict {
        /// Model files or directories holding `*.svm.json`.
        #[arg(long, required = true, num_args = 1..)]
        models: Vec<PathBuf>,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// File of video ids, one per line; test videos when omitted.
        #[arg(long)]
        ids: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Late fusion of per-modality scores with cross-validated weights.
    Fuse {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// `NAME=TRAIN_SCORES,TEST_SCORES`, once per modality.
        #[arg(long = "scores", required = true, value_parser = parse_modality)]
        scores: Vec<ModalityFiles>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-event AP and mAP, or multiclass accuracy.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "map")]
        task: EvalTask,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fisher-vector model fitting and encoding.
    #[command(subcommand)]
    Fv(FvCommand),
    /// Fit PCA on the non-test vectors of a pooled store and project it.
    Pca {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        pca_dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus.
    Synth {
        /// JSON spec; defaults apply to omitted fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a manifest, and optionally that its files exist.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Run a configuration matrix on a synthetic corpus.
    Report {
        /// Corpus directory written by `synth`.
        #[arg(long)]
        data: PathBuf,
        /// JSON matrix; the standard comparison when omitted.
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the patch layout and objectness foreground for a frame size.
    Layout {
        #[arg(long)]
        width: u32,
        #[arg(long)]
        height: u32,
        #[arg(long)]
        proposals: Option<PathBuf>,
        #[arg(long, default_value_t = vidcnn::geometry::DEFAULT_OBJECTNESS_ALPHA)]
        alpha: f64,
    },
}

#[derive(Debug, Subcommand)]
enum FvCommand {
    /// Fit descriptor PCA and the GMM on training descriptors.
    Fit {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Directory the manifest's descriptor paths are relative to.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode every video's descriptors into a feature store.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// One flag per configuration field; each overrides the `--config` file.
#[derive(Debug, Clone, Default, Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    layer: Option<Layer>,
    #[arg(long)]
    regions: Option<RegionScheme>,
    #[arg(long)]
    spatial: Option<PoolMode>,
    #[arg(long)]
    temporal: Option<PoolMode>,
    #[arg(long)]
    norm: Option<NormScheme>,
    #[arg(long)]
    pca_dim: Option<usize>,
    #[arg(long)]
    kernel: Option<KernelKind>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "C")]
    c: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    grid_step: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    gmm_components: Option<usize>,
    #[arg(long)]
    descriptor_pca_dim: Option<usize>,
    #[arg(long)]
    zero_order: bool,
    #[arg(long)]
    objectness_alpha: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { cfg.$field = v; })*
            };
        }
        set!(layer, regions, spatial, temporal, norm, kernel, folds, grid_step, seed, gmm_components, objectness_alpha);
        if self.pca_dim.is_some() {
            cfg.pca_dim = self.pca_dim;
        }
        if self.gamma.is_some() {
            cfg.gamma = self.gamma;
        }
        if self.c.is_some() {
            cfg.c = self.c;
        }
        if self.descriptor_pca_dim.is_some() {
            cfg.descriptor_pca_dim = self.descriptor_pca_dim;
        }
        if self.zero_order {
            cfg.zero_order = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_modality(s: &str) -> std::result::Result<ModalityFiles, String> {
    let (name, files) = s.split_once('=').ok_or("expected NAME=TRAIN,TEST")?;
    let (train, test) = files.split_once(',').ok_or("expected NAME=TRAIN,TEST")?;
    if name.is_empty() || train.is_empty() || test.is_empty() {
        return Err("expected NAME=TRAIN,TEST".into());
    }
    Ok(ModalityFiles {
        name: name.into(),
        train: train.into(),
        test: test.into(),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn finish_batch(report: &BatchReport, out: &Path) -> Result<()> {
    println!("{} videos written to {}", report.processed, out.display());
    if report.ok() {
        return Ok(());
    }
    for (id, e) in &report.failures {
        eprintln!("failed: {id}: {e}");
    }
    Err(Error::DataIntegrity(format!("{} videos failed", report.failures.len())))
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Pool {
            cfg,
            manifest,
            features,
            out,
        } => {
            let report = cmd_pool(&cfg.resolve()?, &manifest, &features, &out)?;
            finish_batch(&report, &out)
        }
        Command::Train {
            cfg,
            manifest,
            features,
            out,
        } => {
            create_dir(&out)?;
            let trained = cmd_train(&cfg.resolve()?, &manifest, &features, &out)?;
            for e in &trained.skipped {
                eprintln!("skipped {e}: no positives");
            }
            println!("{} models written to {}", trained.models.len(), out.display());
            Ok(())
        }
        Command::Predict {
            models,
            features,
            manifest,
            ids,
            out,
        } => {
            let ids = ids.as_deref().map(read_ids).transpose()?;
            let table = cmd_predict(&models, &features, &manifest, ids, &out)?;
            println!("{} scores written to {}", table.len(), out.display());
            Ok(())
        }
        Command::Fuse {
            cfg,
            manifest,
            scores,
            out,
        } => {
            create_dir(&out)?;
            let fused = cmd_fuse(&scores, &manifest, &cfg.resolve()?, &out)?;
            let names: Vec<&str> = scores.iter().map(|s| s.name.as_str()).collect();
            println!("{:<24} {:<32} {:>9}", "event", names.join("/"), "oof AP");
            for e in &fused.estimates {
                let w: Vec<String> = e.weights.iter().map(|w| format!("{w:.2}")).collect();
                println!("{:<24} {:<32} {:>9}", e.event, w.join("/"), vidcnn::eval::percent(e.fused_ap));
            }
            Ok(())
        }
        Command::Eval {
            scores,
            manifest,
            task,
            out,
        } => {
            let report = cmd_eval(&scores, &manifest, task)?;
            print!("{}", report.to_table());
            if let Some(p) = out {
                formats::write_json(&p, &report)?;
            }
            Ok(())
        }
        Command::Fv(FvCommand::Fit {
            cfg,
            manifest,
            features,
            out,
        }) => {
            let model = cmd_fv_fit(&cfg.resolve()?, &manifest, &features, &out)?;
            println!(
                "{} components over {} dims; encodings have {} dims",
                model.gmm.components(),
                model.gmm.dim(),
                model.output_dim()
            );
            Ok(())
        }
        Command::Fv(FvCommand::Encode {
            model,
            manifest,
            features,
            out,
        }) => {
            let report = cmd_fv_encode(&model, &manifest, &features, &out)?;
            finish_batch(&report, &out)
        }
        Command::Pca {
            features,
            manifest,
            pca_dim,
            out,
        } => {
            let model = cmd_pca(&features, &manifest, pca_dim, &out)?;
            println!("projected {} -> {} dims", model.input_dim(), model.components.len());
            Ok(())
        }
        Command::Synth { spec, seed, out } => {
            let mut spec: SynthSpec = match spec {
                Some(p) => formats::read_json(&p)?,
                None => SynthSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            create_dir(&out)?;
            let data = synth_to_dir(&spec, &out)?;
            println!("{} videos written to {}", data.manifest.videos.len(), out.display());
            Ok(())
        }
        Command::Validate { manifest, features } => {
            let problems = cmd_validate(&manifest, features.as_deref())?;
            for p in &problems {
                println!("{p}");
            }
            if problems.is_empty() {
                println!("ok");
                Ok(())
            } else {
                Err(Error::DataIntegrity(format!("{} problems", problems.len())))
            }
        }
        Command::Report {
            data,
            matrix,
            seed,
            out,
        } => {
            let matrix = match matrix {
                Some(p) => formats::read_json(&p)?,
                None => ConfigMatrix::standard(seed),
            };
            let report = run_report(&data, &matrix)?;
            print!("{}", report.to_table());
            if let Some(p) = out {
                formats::write_atomic(&p, report.to_json().as_bytes())?;
            }
            Ok(())
        }
        Command::Layout {
            width,
            height,
            proposals,
            alpha,
        } => {
            let proposals = proposals.as_deref().map(ProposalList::load).transpose()?;
            let report = layout(width, height, proposals.as_ref(), alpha)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("layout serializes"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modality_argument() {
        let m = parse_modality("cnn=a/train.tsv,b/test.tsv").unwrap();
        assert_eq!(m.name, "cnn");
        assert_eq!(m.train, PathBuf::from("a/train.tsv"));
        assert_eq!(m.test, PathBuf::from("b/test.tsv"));
        assert!(parse_modality("cnn").is_err());
        assert!(parse_modality("cnn=a.tsv").is_err());
        assert!(parse_modality("=a,b").is_err());
    }

    #[test]
    fn flags_map_onto_config() {
        let cli = Cli::try_parse_from([
            "vidcnn", "train", "--manifest", "m", "--features", "f", "--out", "o", "--kernel", "linear", "--C", "4",
            "--grid-step", "0.1", "--pca-dim", "16",
        ])
        .unwrap();
        let Command::Train { cfg, .. } = cli.command else { panic!("parsed another command") };
        let cfg = cfg.resolve().unwrap();
        assert_eq!(cfg.kernel, KernelKind::Linear);
        assert_eq!(cfg.c, Some(4.0));
        assert_eq!(cfg.grid_step, 0.1);
        assert_eq!(cfg.pca_dim, Some(16));
        assert_eq!(cfg.layer, RunConfig::default().layer);
    }
}
