use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::formats::{
    read_descriptors, read_feature_file, read_json, write_json, FeatureSource, FeatureStore, ProposalList, ScoreTable,
};
use crate::dataset::{assemble_event_training_set, validate_manifest, DatasetManifest, Role};
use crate::eval::{mean_ap, multiclass_accuracy, percent, RankedRun, Scored};
use crate::fisher::{fv_encode, gmm_fit, GmmModel, GmmParams};
use crate::fusion::{cross_val_split, fuse_scores, optimize_weights, FusionModel};
use crate::geometry::{build_patch_layout, objectness_foreground, Foreground, PatchLayout};
use crate::pooling::{aggregate_video, Provenance};
use crate::svm::{default_gamma, platt_fit, svm_margin, svm_posterior, svm_train, KernelKind, KernelSpec, SvmModel, TrainParams};
use crate::transform::{normalize, pca_fit, pca_transform, PcaModel};
use crate::{rng, Error, Result};

pub const OOF_SCORES_FILE: &str = "train_oof_scores.tsv";
pub const MODEL_SUFFIX: &str = ".svm.json";

/// Outcome of a per-video batch: failures are collected, not fatal.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BatchReport {
    pub processed: usize,
    pub failures: Vec<(String, String)>,
}

impl BatchReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

fn unique_videos(manifest: &DatasetManifest) -> Vec<&crate::dataset::VideoRecord> {
    let mut seen = BTreeSet::new();
    let mut out: Vec<_> = manifest
        .videos
        .iter()
        .filter(|v| seen.insert(v.video_id.as_str()))
        .collect();
    out.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    out
}

fn non_test_ids(manifest: &DatasetManifest) -> BTreeSet<String> {
    manifest
        .videos
        .iter()
        .filter(|v| v.role != Role::Test)
        .map(|v| v.video_id.clone())
        .collect()
}

/// Fits PCA on the non-test vectors of `store` and projects every vector.
pub fn fit_store_pca(store: &FeatureStore, manifest: &DatasetManifest, dim: usize) -> Result<(FeatureStore, PcaModel)> {
    let FeatureSource::Pooled(prov) = &store.source else {
        return Err(Error::invalid("PCA applies to pooled CNN stores only"));
    };
    if prov.pca_dim.is_some() {
        return Err(Error::invalid("store is already PCA-projected"));
    }
    let fit_ids = non_test_ids(manifest);
    let rows: Vec<Vec<f64>> = store
        .vectors
        .iter()
        .filter(|(id, _)| fit_ids.contains(*id))
        .map(|(_, v)| v.clone())
        .collect();
    let model = pca_fit(&rows, dim)?;
    let mut out = FeatureStore::new(
        FeatureSource::Pooled(Provenance {
            pca_dim: Some(dim),
            ..prov.clone()
        }),
        dim,
    );
    for (id, v) in &store.vectors {
        out.insert(id, pca_transform(&model, v)?)?;
    }
    Ok((out, model))
}

/// Pools, normalizes and optionally PCA-projects every manifest video.
pub fn pool_videos(
    config: &RunConfig,
    manifest: &DatasetManifest,
    feature_dir: &Path,
) -> Result<(FeatureStore, Option<PcaModel>, BatchReport)> {
    config.validate()?;
    let videos = unique_videos(manifest);
    let results: Vec<(String, Result<Vec<f64>>)> = videos
        .par_iter()
        .map(|v| {
            let r = (|| {
                let set = read_feature_file(&v.video_id, &feature_dir.join(&v.feature_path))?;
                if set.layer != config.layer {
                    return Err(Error::data(format!(
                        "{}: file holds {} features, run expects {}",
                        v.video_id, set.layer, config.layer
                    )));
                }
                let pooled = aggregate_video(&set, config.regions, config.spatial, config.temporal)?;
                normalize(&pooled.vector, config.norm)
            })();
            (v.video_id.clone(), r)
        })
        .collect();

    let provenance = Provenance {
        layer: config.layer,
        regions: config.regions,
        spatial: config.spatial,
        temporal: config.temporal,
        norm: Some(config.norm),
        pca_dim: None,
    };
    let dim = results.iter().find_map(|(_, r)| r.as_ref().ok().map(Vec::len)).unwrap_or(0);
    let mut store = FeatureStore::new(FeatureSource::Pooled(provenance), dim);
    let mut report = BatchReport::default();
    for (id, r) in results {
        match r.and_then(|v| store.insert(&id, v)) {
            Ok(()) => report.processed += 1,
            Err(e) => {
                log::error!("{id}: {e}");
                report.failures.push((id, e.to_string()));
            }
        }
    }
    let mut pca = None;
    if let Some(k) = config.pca_dim {
        let (projected, model) = fit_store_pca(&store, manifest, k)?;
        store = projected;
        pca = Some(model);
    }
    Ok((store, pca, report))
}

/// A trained per-event detector and the features it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventModel {
    pub event: String,
    pub source: FeatureSource,
    pub svm: SvmModel,
    /// Folds used for the calibration margins; 0 means resubstitution.
    pub calibration_folds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub models: Vec<EventModel>,
    /// Calibrated out-of-fold posteriors on each event's training set.
    pub oof: ScoreTable,
    pub skipped: Vec<String>,
}

struct EventFit {
    model: EventModel,
    ids: Vec<String>,
    posteriors: Vec<f64>,
}

fn train_one(config: &RunConfig, store: &FeatureStore, manifest: &DatasetManifest, index: usize, event: &str) -> Result<Option<EventFit>> {
    let set = match assemble_event_training_set(manifest, event) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("skipping event {event}: {e}");
            return Ok(None);
        }
    };
    if set.negatives.is_empty() {
        log::warn!("skipping event {event}: no negatives");
        return Ok(None);
    }
    let labeled = set.labeled_ids();
    let ids: Vec<String> = labeled.iter().map(|(id, _)| id.clone()).collect();
    let labels: Vec<bool> = labeled.iter().map(|(_, l)| *l).collect();
    let rows = store.rows(&ids)?;

    if config.kernel == KernelKind::Chi2 && !store.source.is_non_negative() {
        return Err(Error::invalid("chi2 kernel needs a non-negative feature store"));
    }
    let gamma = match config.gamma {
        Some(g) => g,
        None => default_gamma(&rows, config.kernel, rng::derive(config.seed, index as u64))?,
    };
    let kernel = KernelSpec::new(config.kernel, gamma)?;
    let params = TrainParams {
        c: config.c_for(store.source.layer()),
        ..Default::default()
    };
    let mut svm = svm_train(&rows, &labels, &kernel, &params)?;

    let pos = set.positives.len();
    let neg = set.negatives.len();
    let k = config.folds.min(pos).min(neg);
    let margins = if k >= 2 {
        let split = cross_val_split(&labels, k, rng::derive(config.seed, 0x1000 + index as u64))?;
        let mut margins = vec![0.0; ids.len()];
        for fold in 0..k {
            let train = split.complement(fold);
            let fold_rows: Vec<Vec<f64>> = train.iter().map(|&i| rows[i].clone()).collect();
            let fold_labels: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
            let m = svm_train(&fold_rows, &fold_labels, &kernel, &params)?;
            for i in split.members(fold) {
                margins[i] = svm_margin(&m, &rows[i])?;
            }
        }
        margins
    } else {
        log::warn!("event {event}: too few examples for cross-validated calibration; using training margins");
        rows.iter().map(|r| svm_margin(&svm, r)).collect::<Result<_>>()?
    };
    let platt = platt_fit(&margins, &labels)?;
    svm.platt = Some(platt);
    let posteriors = margins.iter().map(|&m| platt.posterior(m)).collect();
    Ok(Some(EventFit {
        model: EventModel {
            event: event.to_string(),
            source: store.source.clone(),
            svm,
            calibration_folds: if k >= 2 { k } else { 0 },
        },
        ids,
        posteriors,
    }))
}

/// One calibrated detector per manifest event.
pub fn train_events(config: &RunConfig, manifest: &DatasetManifest, store: &FeatureStore) -> Result<TrainOutput> {
    config.validate()?;
    let fits: Vec<Option<EventFit>> = manifest
        .events
        .par_iter()
        .enumerate()
        .map(|(i, e)| train_one(config, store, manifest, i, e))
        .collect::<Result<_>>()?;
    let mut out = TrainOutput {
        models: Vec::new(),
        oof: ScoreTable::default(),
        skipped: Vec::new(),
    };
    for (fit, event) in fits.into_iter().zip(&manifest.events) {
        match fit {
            Some(f) => {
                for (id, p) in f.ids.iter().zip(&f.posteriors) {
                    out.oof.insert(id, event, *p)?;
                }
                out.models.push(f.model);
            }
            None => out.skipped.push(event.clone()),
        }
    }
    Ok(out)
}

/// Posterior of every model on every listed video.
pub fn predict_scores(models: &[EventModel], store: &FeatureStore, ids: &[String]) -> Result<ScoreTable> {
    for m in models {
        if m.svm.dim() != store.dim {
            return Err(Error::invalid(format!(
                "model for event {} expects {}-dim features, store holds {}",
                m.event,
                m.svm.dim(),
                store.dim
            )));
        }
        if m.source != store.source {
            return Err(Error::invalid(format!(
                "model for event {} was trained on different features than the store holds",
                m.event
            )));
        }
    }
    let rows = store.rows(ids)?;
    let per_model: Vec<Vec<f64>> = models
        .par_iter()
        .map(|m| rows.iter().map(|r| svm_posterior(&m.svm, r)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let mut table = ScoreTable::default();
    for (m, scores) in models.iter().zip(per_model) {
        for (id, s) in ids.iter().zip(scores) {
            table.insert(id, &m.event, s)?;
        }
    }
    Ok(table)
}

/// Score tables for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityScores {
    pub name: String,
    /// Out-of-fold posteriors on the training side.
    pub train: ScoreTable,
    pub test: ScoreTable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionEstimate {
    pub event: String,
    pub weights: Vec<f64>,
    /// Out-of-fold AP of each modality alone.
    pub modality_ap: Vec<f64>,
    /// AP of the fused out-of-fold scores at the chosen weights.
    pub fused_ap: f64,
    /// AP when the weights are re-chosen inside an outer cross-validation.
    pub nested_ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuseOutput {
    pub model: FusionModel,
    pub fused_train: ScoreTable,
    pub fused_test: ScoreTable,
    pub estimates: Vec<FusionEstimate>,
}

fn check_coverage(modalities: &[ModalityScores], side: &str, get: impl Fn(&ModalityScores) -> &ScoreTable) -> Result<()> {
    let reference = get(&modalities[0]).keys();
    for m in &modalities[1..] {
        let keys = get(m).keys();
        let missing: Vec<String> = reference
            .symmetric_difference(&keys)
            .map(|(v, e)| format!("({v}, {e})"))
            .collect();
        if !missing.is_empty() {
            return Err(Error::data(format!(
                "{side} scores of '{}' and '{}' cover different pairs: {}",
                modalities[0].name,
                m.name,
                missing.join(", ")
            )));
        }
    }
    Ok(())
}

/// Per-event weight search on out-of-fold scores, applied to test scores.
pub fn fuse_modalities(
    modalities: &[ModalityScores],
    manifest: &DatasetManifest,
    grid_step: f64,
    folds: usize,
    seed: u64,
) -> Result<FuseOutput> {
    if modalities.len() < 2 {
        return Err(Error::invalid("fusion needs at least two modalities"));
    }
    check_coverage(modalities, "training", |m| &m.train)?;
    check_coverage(modalities, "test", |m| &m.test)?;
    let mut model = FusionModel::new(modalities.iter().map(|m| m.name.clone()).collect())?;
    let events: BTreeSet<String> = modalities[0].train.events();
    let mut fused_train = ScoreTable::default();
    let mut fused_test = ScoreTable::default();
    let mut estimates = Vec::new();

    for (index, event) in manifest.events.iter().enumerate() {
        if !events.contains(event) {
            continue;
        }
        let set = assemble_event_training_set(manifest, event)?;
        let positives: BTreeSet<&String> = set.positives.iter().collect();
        let ids: Vec<String> = modalities[0].train.for_event(event).into_iter().map(|(v, _)| v).collect();
        let labels: Vec<bool> = ids.iter().map(|id| positives.contains(id)).collect();
        let scores: Vec<Vec<f64>> = modalities
            .iter()
            .map(|m| ids.iter().map(|id| m.train.get(id, event).expect("coverage checked")).collect())
            .collect();
        let choice = optimize_weights(&scores, &labels, grid_step)?;
        model.set_weights(event, choice.weights.clone())?;

        let refs: Vec<&[f64]> = scores.iter().map(Vec::as_slice).collect();
        for (id, s) in ids.iter().zip(fuse_scores(&choice.weights, &refs)?) {
            fused_train.insert(id, event, s)?;
        }
        let test_ids: Vec<String> = modalities[0].test.for_event(event).into_iter().map(|(v, _)| v).collect();
        let test_scores: Vec<Vec<f64>> = modalities
            .iter()
            .map(|m| test_ids.iter().map(|id| m.test.get(id, event).expect("coverage checked")).collect())
            .collect();
        let test_refs: Vec<&[f64]> = test_scores.iter().map(Vec::as_slice).collect();
        for (id, s) in test_ids.iter().zip(fuse_scores(&choice.weights, &test_refs)?) {
            fused_test.insert(id, event, s)?;
        }

        let modality_ap = scores
            .iter()
            .map(|s| crate::eval::average_precision(s, &labels))
            .collect::<Result<_>>()?;
        let pos = labels.iter().filter(|&&l| l).count();
        let k = folds.min(pos).min(labels.len() - pos);
        let nested_ap = if k >= 2 {
            let split = cross_val_split(&labels, k, rng::derive(seed, index as u64))?;
            let mut held_out = vec![0.0; ids.len()];
            for fold in 0..k {
                let train = split.complement(fold);
                let sub: Vec<Vec<f64>> = scores.iter().map(|s| train.iter().map(|&i| s[i]).collect()).collect();
                let sub_labels: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
                let w = optimize_weights(&sub, &sub_labels, grid_step)?.weights;
                for i in split.members(fold) {
                    held_out[i] = w.iter().zip(&scores).map(|(w, s)| w * s[i]).sum();
                }
            }
            Some(crate::eval::average_precision(&held_out, &labels)?)
        } else {
            None
        };
        estimates.push(FusionEstimate {
            event: event.clone(),
            weights: choice.weights,
            modality_ap,
            fused_ap: choice.ap,
            nested_ap,
        });
    }
    Ok(FuseOutput {
        model,
        fused_train,
        fused_test,
        estimates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTask {
    Map,
    Accuracy,
}

impl std::str::FromStr for EvalTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "map" => Ok(EvalTask::Map),
            "accuracy" => Ok(EvalTask::Accuracy),
            _ => Err(Error::invalid(format!("unknown eval task '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventAp {
    pub event: String,
    pub positives: usize,
    /// `None` when the test set has no positives for the event.
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub task: EvalTask,
    pub instances: usize,
    pub per_event: Vec<EventAp>,
    pub map: Option<f64>,
    pub accuracy: Option<f64>,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        match self.task {
            EvalTask::Map => {
                let _ = writeln!(out, "{:<24} {:>9} {:>9}", "event", "positives", "AP");
                for e in &self.per_event {
                    let ap = e.ap.map_or_else(|| "n/a".to_string(), percent);
                    let _ = writeln!(out, "{:<24} {:>9} {:>9}", e.event, e.positives, ap);
                }
                if let Some(m) = self.map {
                    let _ = writeln!(out, "{:<24} {:>9} {:>9}", "mAP", "", percent(m));
                }
            }
            EvalTask::Accuracy => {
                if let Some(a) = self.accuracy {
                    let _ = writeln!(out, "accuracy {} over {} videos", percent(a), self.instances);
                }
            }
        }
        out
    }
}

/// AP per event and mAP over events with test positives, or one-vs-rest
/// accuracy where ties go to the lexicographically first event.
pub fn evaluate(scores: &ScoreTable, manifest: &DatasetManifest, task: EvalTask) -> Result<EvalReport> {
    let test_ids = manifest.ids_with_role(Role::Test);
    if test_ids.is_empty() {
        return Err(Error::invalid("manifest has no test videos"));
    }
    if manifest.events.is_empty() {
        return Err(Error::invalid("manifest declares no events"));
    }
    let lookup = |id: &str, e: &str| {
        scores
            .get(id, e)
            .ok_or_else(|| Error::data(format!("no score for ({id}, {e})")))
    };
    match task {
        EvalTask::Map => {
            let mut per_event = Vec::new();
            for e in &manifest.events {
                let items = manifest
                    .test_relevance(e)
                    .into_iter()
                    .map(|(id, relevant)| Ok(Scored { score: lookup(&id, e)?, id, relevant }))
                    .collect::<Result<Vec<_>>>()?;
                let positives = items.iter().filter(|s| s.relevant).count();
                let ap = if positives == 0 {
                    log::warn!("event {e} has no positive test videos; left out of mAP");
                    None
                } else {
                    Some(RankedRun::new(items)?.average_precision()?)
                };
                per_event.push(EventAp { event: e.clone(), positives, ap });
            }
            let aps: Vec<f64> = per_event.iter().filter_map(|e| e.ap).collect();
            let map = Some(mean_ap(&aps)?);
            Ok(EvalReport {
                task,
                instances: test_ids.len(),
                per_event,
                map,
                accuracy: None,
            })
        }
        EvalTask::Accuracy => {
            let mut events = manifest.events.clone();
            events.sort();
            let mut predicted = Vec::new();
            let mut truth = Vec::new();
            for id in &test_ids {
                let v = manifest.video(id).expect("id from manifest");
                let pos: Vec<&str> = v
                    .labels
                    .iter()
                    .filter(|l| l.role == crate::dataset::LabelRole::Positive)
                    .map(|l| l.event.as_str())
                    .collect();
                if pos.len() != 1 {
                    return Err(Error::data(format!(
                        "{id}: accuracy needs exactly one positive label, found {}",
                        pos.len()
                    )));
                }
                let mut best: Option<(&str, f64)> = None;
                for e in &events {
                    let s = lookup(id, e)?;
                    if best.is_none_or(|(_, b)| s > b) {
                        best = Some((e, s));
                    }
                }
                predicted.push(best.expect("events non-empty").0.to_string());
                truth.push(pos[0].to_string());
            }
            Ok(EvalReport {
                task,
                instances: test_ids.len(),
                per_event: Vec::new(),
                map: None,
                accuracy: Some(multiclass_accuracy(&predicted, &truth)?),
            })
        }
    }
}

/// GMM over (optionally PCA-reduced) descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FvModel {
    pub pca: Option<PcaModel>,
    pub gmm: GmmModel,
    pub zero_order: bool,
}

impl FvModel {
    pub fn descriptor_dim(&self) -> usize {
        self.pca.as_ref().map_or(self.gmm.dim(), PcaModel::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        crate::fisher::fv_dim(self.gmm.dim(), self.gmm.components(), self.zero_order)
    }

    pub fn source(&self) -> FeatureSource {
        FeatureSource::Fisher {
            components: self.gmm.components(),
            descriptor_dim: self.descriptor_dim(),
            zero_order: self.zero_order,
        }
    }

    pub fn encode(&self, descriptors: &[Vec<f64>]) -> Result<Vec<f64>> {
        let reduced;
        let input = match &self.pca {
            Some(p) => {
                reduced = descriptors.iter().map(|d| pca_transform(p, d)).collect::<Result<Vec<_>>>()?;
                &reduced
            }
            None => descriptors,
        };
        Ok(fv_encode(&self.gmm, input, self.zero_order)?.values)
    }
}

/// Fits the descriptor PCA and GMM on pooled descriptors.
pub fn fv_fit(config: &RunConfig, descriptors: &[Vec<f64>]) -> Result<FvModel> {
    let d = descriptors.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(Error::invalid("no descriptors to fit"));
    }
    let target = match config.descriptor_pca_dim {
        Some(0) => None,
        Some(k) => Some(k),
        None if d >= 2 => Some(d / 2),
        None => None,
    };
    let (pca, reduced) = match target {
        Some(k) => {
            let p = pca_fit(descriptors, k)?;
            let r = descriptors.iter().map(|x| pca_transform(&p, x)).collect::<Result<Vec<_>>>()?;
            (Some(p), r)
        }
        None => (None, descriptors.to_vec()),
    };
    let params = GmmParams {
        components: config.gmm_components,
        seed: config.seed,
        ..Default::default()
    };
    let fit = gmm_fit(&reduced, &params)?;
    if !fit.converged {
        log::warn!("GMM stopped after {} iterations without converging", fit.iterations);
    }
    Ok(FvModel {
        pca,
        gmm: fit.model,
        zero_order: config.zero_order,
    })
}

fn descriptor_path(dir: &Path, v: &crate::dataset::VideoRecord) -> Result<PathBuf> {
    v.descriptor_path
        .as_ref()
        .map(|p| dir.join(p))
        .ok_or_else(|| Error::data(format!("{}: manifest row has no descriptor_path", v.video_id)))
}

/// Fits on the descriptors of every non-test video.
pub fn fv_fit_manifest(config: &RunConfig, manifest: &DatasetManifest, dir: &Path) -> Result<FvModel> {
    let fit_ids = non_test_ids(manifest);
    let videos: Vec<_> = unique_videos(manifest)
        .into_iter()
        .filter(|v| fit_ids.contains(&v.video_id))
        .collect();
    let per_video: Vec<Vec<Vec<f64>>> = videos
        .par_iter()
        .map(|v| read_descriptors(&v.video_id, &descriptor_path(dir, v)?))
        .collect::<Result<_>>()?;
    let all: Vec<Vec<f64>> = per_video.into_iter().flatten().collect();
    fv_fit(config, &all)
}

pub fn fv_encode_manifest(model: &FvModel, manifest: &DatasetManifest, dir: &Path) -> Result<(FeatureStore, BatchReport)> {
    let videos = unique_videos(manifest);
    let results: Vec<(String, Result<Vec<f64>>)> = videos
        .par_iter()
        .map(|v| {
            let r = descriptor_path(dir, v)
                .and_then(|p| read_descriptors(&v.video_id, &p))
                .and_then(|d| model.encode(&d));
            (v.video_id.clone(), r)
        })
        .collect();
    let mut store = FeatureStore::new(model.source(), model.output_dim());
    let mut report = BatchReport::default();
    for (id, r) in results {
        match r.and_then(|v| store.insert(&id, v)) {
            Ok(()) => report.processed += 1,
            Err(e) => {
                log::error!("{id}: {e}");
                report.failures.push((id, e.to_string()));
            }
        }
    }
    Ok((store, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayoutReport {
    pub layout: PatchLayout,
    pub foreground: Option<Foreground>,
}

/// Patch rectangles for a frame size plus the foreground crop when
/// proposals are given.
pub fn layout(width: u32, height: u32, proposals: Option<&ProposalList>, alpha: f64) -> Result<LayoutReport> {
    let layout = build_patch_layout(width, height)?;
    let foreground = match proposals {
        Some(p) => {
            if let Some((w, h)) = p.size {
                if (w, h) != (width, height) {
                    return Err(Error::data(format!(
                        "proposals were made for {w}x{h}, frame is {width}x{height}"
                    )));
                }
            }
            Some(objectness_foreground(&p.boxes, width, height, alpha)?)
        }
        None => None,
    };
    Ok(LayoutReport { layout, foreground })
}

pub fn load_models(paths: &[PathBuf]) -> Result<Vec<EventModel>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.to_string_lossy().ends_with(MODEL_SUFFIX))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::invalid("no model files found"));
    }
    files.iter().map(|f| read_json(f)).collect()
}

/// `pool`: writes the store, plus `<out>.pca.json` when PCA is configured.
pub fn cmd_pool(config: &RunConfig, manifest: &Path, feature_dir: &Path, out: &Path) -> Result<BatchReport> {
    let manifest = DatasetManifest::load(manifest)?;
    let (store, pca, report) = pool_videos(config, &manifest, feature_dir)?;
    store.save(out)?;
    if let Some(p) = pca {
        write_json(&sibling(out, "pca.json"), &p)?;
    }
    Ok(report)
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(ext);
    path.with_file_name(name)
}

/// `train`: writes `<event>.svm.json` per event and the out-of-fold scores.
pub fn cmd_train(config: &RunConfig, manifest: &Path, store: &Path, out_dir: &Path) -> Result<TrainOutput> {
    let manifest = DatasetManifest::load(manifest)?;
    let store = FeatureStore::load(store)?;
    let out = train_events(config, &manifest, &store)?;
    for m in &out.models {
        write_json(&out_dir.join(format!("{}{MODEL_SUFFIX}", m.event)), m)?;
    }
    out.oof.save(&out_dir.join(OOF_SCORES_FILE))?;
    Ok(out)
}

/// `predict`: scores the test videos, or `ids` when given.
pub fn cmd_predict(models: &[PathBuf], store: &Path, manifest: &Path, ids: Option<Vec<String>>, out: &Path) -> Result<ScoreTable> {
    let models = load_models(models)?;
    let store = FeatureStore::load(store)?;
    let ids = match ids {
        Some(ids) => ids,
        None => DatasetManifest::load(manifest)?.ids_with_role(Role::Test),
    };
    let table = predict_scores(&models, &store, &ids)?;
    table.save(out)?;
    Ok(table)
}

/// Score files of one modality: out-of-fold training scores and test scores.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModalityFiles {
    pub name: String,
    pub train: PathBuf,
    pub test: PathBuf,
}

/// `fuse`: writes `fusion.json`, `fused_scores.tsv` and `fused_train_scores.tsv`.
pub fn cmd_fuse(files: &[ModalityFiles], manifest: &Path, config: &RunConfig, out_dir: &Path) -> Result<FuseOutput> {
    let manifest = DatasetManifest::load(manifest)?;
    let modalities = files
        .iter()
        .map(|f| {
            Ok(ModalityScores {
                name: f.name.clone(),
                train: ScoreTable::load(&f.train)?,
                test: ScoreTable::load(&f.test)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let out = fuse_modalities(&modalities, &manifest, config.grid_step, config.folds, config.seed)?;
    write_json(&out_dir.join("fusion.json"), &out.model)?;
    out.fused_test.save(&out_dir.join("fused_scores.tsv"))?;
    out.fused_train.save(&out_dir.join("fused_train_scores.tsv"))?;
    Ok(out)
}

pub fn cmd_eval(scores: &Path, manifest: &Path, task: EvalTask) -> Result<EvalReport> {
    evaluate(&ScoreTable::load(scores)?, &DatasetManifest::load(manifest)?, task)
}

pub fn cmd_fv_fit(config: &RunConfig, manifest: &Path, dir: &Path, out: &Path) -> Result<FvModel> {
    let model = fv_fit_manifest(config, &DatasetManifest::load(manifest)?, dir)?;
    write_json(out, &model)?;
    Ok(model)
}

pub fn cmd_fv_encode(model: &Path, manifest: &Path, dir: &Path, out: &Path) -> Result<BatchReport> {
    let model: FvModel = read_json(model)?;
    let (store, report) = fv_encode_manifest(&model, &DatasetManifest::load(manifest)?, dir)?;
    store.save(out)?;
    Ok(report)
}

/// `pca`: projects an existing store, writing the model beside the output.
pub fn cmd_pca(store: &Path, manifest: &Path, dim: usize, out: &Path) -> Result<PcaModel> {
    let (projected, model) = fit_store_pca(&FeatureStore::load(store)?, &DatasetManifest::load(manifest)?, dim)?;
    projected.save(out)?;
    write_json(&sibling(out, "pca.json"), &model)?;
    Ok(model)
}

/// Structural violations, plus missing files when a feature directory is given.
pub fn cmd_validate(manifest: &Path, feature_dir: Option<&Path>) -> Result<Vec<String>> {
    let m = DatasetManifest::load(manifest)?;
    let mut out: Vec<String> = validate_manifest(&m).iter().map(ToString::to_string).collect();
    if let Some(dir) = feature_dir {
        for v in unique_videos(&m) {
            let mut paths = vec![&v.feature_path];
            paths.extend(v.descriptor_path.as_ref());
            for p in paths {
                if !dir.join(p).is_file() {
                    out.push(format!("{}: missing file {p}", v.video_id));
                }
            }
        }
    }
    Ok(out)
}
