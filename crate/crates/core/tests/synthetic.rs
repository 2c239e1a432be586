//! Directional checks of the synthetic generator through the full pipeline.

use vidcnn::harness::{run_report, synth_to_dir, ConfigMatrix, MatrixRow, Modality, SynthSpec};
use vidcnn::pipeline::RunConfig;
use vidcnn::pooling::PoolMode;

fn baseline(name: &str, config: RunConfig) -> MatrixRow {
    MatrixRow {
        name: name.into(),
        modality: Modality::Cnn,
        config,
    }
}

fn maps(spec: &SynthSpec, rows: Vec<MatrixRow>) -> Vec<f64> {
    let dir = tempfile::tempdir().unwrap();
    synth_to_dir(spec, dir.path()).unwrap();
    let report = run_report(dir.path(), &ConfigMatrix { rows, fusions: vec![] }).unwrap();
    report.rows.iter().map(|r| 100.0 * r.map).collect()
}

#[test]
fn noise_free_corpus_is_solved() {
    let spec = SynthSpec { noise: 0.0, seed: 11, ..Default::default() };
    let m = maps(&spec, vec![baseline("base", RunConfig::default())]);
    assert_eq!(format!("{:.2}", m[0]), "100.00");
}

#[test]
fn full_signal_fraction_makes_max_and_avg_agree() {
    let mut max = 0.0;
    let mut avg = 0.0;
    for seed in 0..3 {
        let spec = SynthSpec { signal_fraction: 1.0, seed, ..Default::default() };
        let cfg = RunConfig { seed, ..Default::default() };
        let m = maps(
            &spec,
            vec![
                baseline("max", cfg.clone()),
                baseline("avg", RunConfig { temporal: PoolMode::Avg, ..cfg }),
            ],
        );
        max += m[0] / 3.0;
        avg += m[1] / 3.0;
    }
    assert!((max - avg).abs() <= 1.0, "max {max:.2} avg {avg:.2}");
}

#[test]
fn map_does_not_rise_with_noise() {
    let levels = [0.5, 1.0, 2.0];
    let mut means = [0.0; 3];
    for (i, &noise) in levels.iter().enumerate() {
        for seed in 0..5 {
            let spec = SynthSpec { noise, seed, ..Default::default() };
            let cfg = RunConfig { seed, ..Default::default() };
            means[i] += maps(&spec, vec![baseline("base", cfg)])[0] / 5.0;
        }
    }
    for w in means.windows(2) {
        assert!(w[1] <= w[0] + 1.0, "{means:?}");
    }
}
