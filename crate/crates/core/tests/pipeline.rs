use std::path::Path;

use vidcnn::harness::{synth_to_dir, SynthSpec, MANIFEST_FILE};
use vidcnn::pipeline::{
    cmd_eval, cmd_fuse, cmd_fv_encode, cmd_fv_fit, cmd_pca, cmd_pool, cmd_predict, cmd_train, EvalTask, FeatureStore,
    ModalityFiles, RunConfig, ScoreTable,
};

fn spec() -> SynthSpec {
    SynthSpec {
        events: 3,
        train_positives: 10,
        train_near_misses: 3,
        background: 40,
        test_positives: 6,
        test_near_misses: 2,
        test_background: 12,
        frames: 8,
        dim: 48,
        descriptors_per_video: 16,
        descriptor_dim: 8,
        seed: 21,
        ..Default::default()
    }
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn file_pipeline_from_pool_to_eval() {
    let data = tempfile::tempdir().unwrap();
    synth_to_dir(&spec(), data.path()).unwrap();
    let manifest = data.path().join(MANIFEST_FILE);
    let work = tempfile::tempdir().unwrap();
    let w = work.path();
    let cfg = RunConfig { gmm_components: 4, seed: 5, ..Default::default() };

    let pooled = w.join("cnn.vpol");
    assert!(cmd_pool(&cfg, &manifest, data.path(), &pooled).unwrap().ok());
    let first = read(&pooled);
    cmd_pool(&cfg, &manifest, data.path(), &pooled).unwrap();
    assert_eq!(read(&pooled), first);
    assert_eq!(FeatureStore::load(&pooled).unwrap().dim, 8 * 48);

    let cnn_models = w.join("cnn");
    std::fs::create_dir(&cnn_models).unwrap();
    let trained = cmd_train(&cfg, &manifest, &pooled, &cnn_models).unwrap();
    assert_eq!(trained.models.len(), 3);
    let cnn_test = w.join("cnn_test.tsv");
    let scores = cmd_predict(std::slice::from_ref(&cnn_models), &pooled, &manifest, None, &cnn_test).unwrap();
    assert!(scores.scores.values().all(|&s| s > 0.0 && s < 1.0));
    assert_eq!(ScoreTable::load(&cnn_test).unwrap(), scores);

    let fv_model = w.join("fv.json");
    cmd_fv_fit(&cfg, &manifest, data.path(), &fv_model).unwrap();
    let fv_store = w.join("fv.vpol");
    assert!(cmd_fv_encode(&fv_model, &manifest, data.path(), &fv_store).unwrap().ok());
    assert_eq!(FeatureStore::load(&fv_store).unwrap().dim, 2 * 4 * 4);
    let fv_models = w.join("fv");
    std::fs::create_dir(&fv_models).unwrap();
    cmd_train(&cfg, &manifest, &fv_store, &fv_models).unwrap();
    let fv_test = w.join("fv_test.tsv");
    cmd_predict(std::slice::from_ref(&fv_models), &fv_store, &manifest, None, &fv_test).unwrap();

    let fused_dir = w.join("fused");
    std::fs::create_dir(&fused_dir).unwrap();
    let files = [
        ModalityFiles { name: "cnn".into(), train: cnn_models.join("train_oof_scores.tsv"), test: cnn_test.clone() },
        ModalityFiles { name: "fv".into(), train: fv_models.join("train_oof_scores.tsv"), test: fv_test },
    ];
    let fused = cmd_fuse(&files, &manifest, &cfg, &fused_dir).unwrap();
    for e in &fused.estimates {
        assert!(e.modality_ap.iter().all(|&a| e.fused_ap >= a));
        assert!((e.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    for scores in [cnn_test, fused_dir.join("fused_scores.tsv")] {
        let report = cmd_eval(&scores, &manifest, EvalTask::Map).unwrap();
        assert_eq!(report.per_event.len(), 3);
        assert!(report.map.unwrap() > 0.3);
    }

    let projected = w.join("pca.vpol");
    let model = cmd_pca(&pooled, &manifest, 6, &projected).unwrap();
    assert_eq!(model.components.len(), 6);
    assert_eq!(FeatureStore::load(&projected).unwrap().dim, 6);
    assert!(w.join("pca.vpol.pca.json").is_file());
}

#[test]
fn predict_on_explicit_ids() {
    let data = tempfile::tempdir().unwrap();
    synth_to_dir(&spec(), data.path()).unwrap();
    let manifest = data.path().join(MANIFEST_FILE);
    let w = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let pooled = w.path().join("p.vpol");
    cmd_pool(&cfg, &manifest, data.path(), &pooled).unwrap();
    cmd_train(&cfg, &manifest, &pooled, w.path()).unwrap();
    let model = w.path().join("E02.svm.json");
    let out = w.path().join("one.tsv");
    let t = cmd_predict(&[model], &pooled, &manifest, Some(vec!["bg_0001".into()]), &out).unwrap();
    assert_eq!(t.len(), 1);
    assert!(t.get("bg_0001", "E02").is_some());
    assert!(cmd_predict(&[w.path().join("p.vpol")], &pooled, &manifest, None, &out).is_err());
}
