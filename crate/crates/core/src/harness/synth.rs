use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, EventLabel, LabelRole, Role, VideoRecord};
use crate::geometry::{build_patch_layout, standard_region_spec, BBox, FOREGROUND_PATCH, FULL_FRAME_PATCH};
use crate::pipeline::formats::{descriptors_to_feature_set, write_atomic, write_feature_file, ProposalList};
use crate::pooling::{Frame, FrameFeatureSet, Layer};
use crate::{rng, Error, Result};

/// Share of the signal seen by the full-frame patch.
const FULL_FRAME_LEAK: f32 = 0.25;
/// Share of the signal seen by the foreground crop.
const FOREGROUND_GAIN: f32 = 0.8;
/// Active dimensions per signal template.
const TEMPLATE_SUPPORT: usize = 6;
const GENERIC_CLUSTERS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub events: usize,
    pub train_positives: usize,
    pub train_near_misses: usize,
    pub background: usize,
    pub test_positives: usize,
    pub test_near_misses: usize,
    pub test_background: usize,
    pub frames: usize,
    pub dim: usize,
    /// 1-based index into the eight spatial-pyramid regions.
    pub signal_region: usize,
    pub signal_fraction: f64,
    pub noise: f64,
    pub amplitude: f64,
    pub descriptors_per_video: usize,
    pub descriptor_dim: usize,
    /// Mean share of a positive's descriptors drawn from its event cluster.
    pub descriptor_signal: f64,
    pub frame_width: u32,
    pub frame_height: u32,
    pub proposals_per_video: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            events: 5,
            train_positives: 30,
            train_near_misses: 10,
            background: 200,
            test_positives: 20,
            test_near_misses: 10,
            test_background: 100,
            frames: 20,
            dim: 64,
            signal_region: 4,
            signal_fraction: 0.2,
            noise: 1.0,
            amplitude: 2.5,
            descriptors_per_video: 30,
            descriptor_dim: 16,
            descriptor_signal: 0.2,
            frame_width: 320,
            frame_height: 240,
            proposals_per_video: 50,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("events", self.events),
            ("train_positives", self.train_positives),
            ("background", self.background),
            ("test_positives", self.test_positives),
            ("frames", self.frames),
            ("dim", self.dim),
            ("descriptors_per_video", self.descriptors_per_video),
            ("descriptor_dim", self.descriptor_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be at least 1")));
        }
        if !(1..=8).contains(&self.signal_region) {
            return Err(Error::invalid(format!("signal_region must lie in 1..=8, got {}", self.signal_region)));
        }
        if !(self.signal_fraction > 0.0 && self.signal_fraction <= 1.0) {
            return Err(Error::invalid(format!("signal_fraction must lie in (0, 1], got {}", self.signal_fraction)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid(format!("noise must be non-negative, got {}", self.noise)));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::invalid(format!("amplitude must be positive, got {}", self.amplitude)));
        }
        if !(0.0..=1.0).contains(&self.descriptor_signal) {
            return Err(Error::invalid("descriptor_signal must lie in [0, 1]"));
        }
        if 2 * self.events * TEMPLATE_SUPPORT > self.dim {
            return Err(Error::invalid(format!(
                "dim {} too small for {} events with disjoint templates",
                self.dim, self.events
            )));
        }
        build_patch_layout(self.frame_width, self.frame_height)?;
        Ok(())
    }

    pub fn event_name(&self, e: usize) -> String {
        format!("E{:02}", e + 1)
    }
}

/// A generated corpus held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub manifest: DatasetManifest,
    pub features: BTreeMap<String, FrameFeatureSet>,
    pub descriptors: BTreeMap<String, Vec<Vec<f64>>>,
    pub proposals: BTreeMap<String, ProposalList>,
}

#[derive(Clone, Copy)]
enum Content {
    Background,
    Positive(usize),
    NearMiss(usize),
}

struct Plan {
    id: String,
    role: Role,
    content: Content,
}

fn plan_videos(spec: &SynthSpec) -> Vec<Plan> {
    let mut plans = Vec::new();
    let mut push = |id: String, role, content| plans.push(Plan { id, role, content });
    for e in 0..spec.events {
        for i in 0..spec.train_positives {
            push(format!("tr_e{:02}_p{i:03}", e + 1), Role::Train, Content::Positive(e));
        }
        for i in 0..spec.train_near_misses {
            push(format!("tr_e{:02}_n{i:03}", e + 1), Role::Train, Content::NearMiss(e));
        }
        for i in 0..spec.test_positives {
            push(format!("te_e{:02}_p{i:03}", e + 1), Role::Test, Content::Positive(e));
        }
        for i in 0..spec.test_near_misses {
            push(format!("te_e{:02}_n{i:03}", e + 1), Role::Test, Content::NearMiss(e));
        }
    }
    for i in 0..spec.background {
        push(format!("bg_{i:04}"), Role::Background, Content::Background);
    }
    for i in 0..spec.test_background {
        push(format!("te_bg_{i:04}"), Role::Test, Content::Background);
    }
    plans
}

/// Corpus-wide random structure shared by every video.
struct World {
    /// `templates[e][s]`: sparse non-negative template `s ∈ {0, 1}` of event `e`.
    templates: Vec<[Vec<f32>; 2]>,
    generic_centers: Vec<Vec<f64>>,
    event_centers: Vec<Vec<f64>>,
}

fn build_world(spec: &SynthSpec) -> World {
    let mut r = rng::seeded(rng::derive(spec.seed, u64::MAX));
    let dims: Vec<usize> = sample(&mut r, spec.dim, 2 * spec.events * TEMPLATE_SUPPORT).into_vec();
    let templates = (0..spec.events)
        .map(|e| {
            let make = |s: usize| {
                let mut t = vec![0.0f32; spec.dim];
                let base = (2 * e + s) * TEMPLATE_SUPPORT;
                for &d in &dims[base..base + TEMPLATE_SUPPORT] {
                    t[d] = 1.0;
                }
                t
            };
            [make(0), make(1)]
        })
        .collect();
    let center = |r: &mut rng::Rng| -> Vec<f64> {
        (0..spec.descriptor_dim)
            .map(|_| 3.0 * r.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let generic_centers = (0..GENERIC_CLUSTERS).map(|_| center(&mut r)).collect();
    let event_centers = (0..spec.events).map(|_| center(&mut r)).collect();
    World {
        templates,
        generic_centers,
        event_centers,
    }
}

fn half_normal(r: &mut rng::Rng) -> f32 {
    r.sample::<f32, _>(StandardNormal).abs()
}

fn cnn_features(spec: &SynthSpec, world: &World, plan: &Plan, r: &mut rng::Rng) -> FrameFeatureSet {
    let noise = spec.noise as f32;
    let d = spec.dim;
    let scene: Vec<f32> = (0..d).map(|_| noise * half_normal(r)).collect();
    let patch_gain: Vec<f32> = (0..FOREGROUND_PATCH).map(|_| r.random_range(0.5..1.5)).collect();

    let signal: Option<Vec<f32>> = match plan.content {
        Content::Background => None,
        Content::Positive(e) => Some(world.templates[e][r.random_range(0..2)].clone()),
        Content::NearMiss(e) => Some(
            world.templates[e][0]
                .iter()
                .zip(&world.templates[e][1])
                .map(|(a, b)| 0.5 * (a + b))
                .collect(),
        ),
    };
    let jitter: f32 = (1.0 + 0.25 * noise * r.sample::<f32, _>(StandardNormal)).max(0.2);
    let amp = spec.amplitude as f32 * jitter;
    let signal_count = ((spec.signal_fraction * spec.frames as f64).ceil() as usize).clamp(1, spec.frames);
    let mut signal_frames = vec![false; spec.frames];
    for f in sample(r, spec.frames, signal_count) {
        signal_frames[f] = true;
    }
    let region = &standard_region_spec().regions[spec.signal_region - 1];

    let frames = (0..spec.frames)
        .map(|f| {
            let patches = (1..=FOREGROUND_PATCH)
                .map(|p| {
                    let gain = if signal_frames[f] {
                        if region.contains(&p) {
                            1.0
                        } else if p == FULL_FRAME_PATCH {
                            FULL_FRAME_LEAK
                        } else if p == FOREGROUND_PATCH {
                            FOREGROUND_GAIN
                        } else {
                            0.0
                        }
                    } else {
                        0.0
                    };
                    let v = (0..d)
                        .map(|j| {
                            let mut x = scene[j] * patch_gain[p - 1] + 0.3 * noise * half_normal(r);
                            if let Some(t) = &signal {
                                x += gain * amp * t[j];
                            }
                            x
                        })
                        .collect();
                    (p, v)
                })
                .collect();
            Frame { index: f, patches }
        })
        .collect();
    FrameFeatureSet {
        video_id: plan.id.clone(),
        layer: Layer::Hidden7,
        dim: d,
        frames,
    }
}

fn descriptors(spec: &SynthSpec, world: &World, plan: &Plan, r: &mut rng::Rng) -> Vec<Vec<f64>> {
    let share = match plan.content {
        Content::Positive(_) => {
            let jitter = (1.0 + 0.5 * spec.noise * r.sample::<f64, _>(StandardNormal)).clamp(0.0, 2.0);
            (spec.descriptor_signal * jitter).min(1.0)
        }
        _ => 0.0,
    };
    let spread = Normal::new(0.0, 1.0).expect("unit normal");
    (0..spec.descriptors_per_video)
        .map(|_| {
            let center = match plan.content {
                Content::Positive(e) if r.random::<f64>() < share => &world.event_centers[e],
                _ => &world.generic_centers[r.random_range(0..GENERIC_CLUSTERS)],
            };
            center
                .iter()
                .map(|c| c + spec.noise * spread.sample(r))
                .collect()
        })
        .collect()
}

fn proposals(spec: &SynthSpec, plan: &Plan, r: &mut rng::Rng) -> ProposalList {
    let (w, h) = (spec.frame_width, spec.frame_height);
    let layout = build_patch_layout(w, h).expect("validated frame size");
    let region = &standard_region_spec().regions[spec.signal_region - 1];
    let target = region
        .iter()
        .filter_map(|&id| layout.get(id).map(|p| layout.rect(p)))
        .reduce(|a, b| BBox {
            x_min: a.x_min.min(b.x_min),
            y_min: a.y_min.min(b.y_min),
            x_max: a.x_max.max(b.x_max),
            y_max: a.y_max.max(b.y_max),
        })
        .unwrap_or_else(|| BBox::full(w, h));
    let focused = !matches!(plan.content, Content::Background);
    let boxes = (0..spec.proposals_per_video)
        .map(|_| {
            if focused && r.random::<f64>() < 0.7 {
                let jx = (target.x_max - target.x_min) / 8;
                let jy = (target.y_max - target.y_min) / 8;
                let x0 = target.x_min + r.random_range(0..=jx);
                let y0 = target.y_min + r.random_range(0..=jy);
                let x1 = target.x_max - r.random_range(0..=jx);
                let y1 = target.y_max - r.random_range(0..=jy);
                BBox::new(x0, y0, x1.max(x0 + 1), y1.max(y0 + 1)).expect("non-degenerate box")
            } else {
                let x0 = r.random_range(0..w - 1);
                let y0 = r.random_range(0..h - 1);
                let x1 = r.random_range(x0 + 1..=w);
                let y1 = r.random_range(y0 + 1..=h);
                BBox::new(x0, y0, x1, y1).expect("non-degenerate box")
            }
        })
        .collect();
    ProposalList { size: Some((w, h)), boxes }
}

/// Builds the corpus. Every video draws from its own seed stream, so the
/// output does not depend on thread scheduling.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let world = build_world(spec);
    let plans = plan_videos(spec);
    let videos: Vec<_> = plans
        .par_iter()
        .enumerate()
        .map(|(i, plan)| {
            let mut r = rng::seeded(rng::derive(spec.seed, i as u64));
            let f = cnn_features(spec, &world, plan, &mut r);
            let d = descriptors(spec, &world, plan, &mut r);
            let p = proposals(spec, plan, &mut r);
            (f, d, p)
        })
        .collect();

    let mut manifest = DatasetManifest {
        events: (0..spec.events).map(|e| spec.event_name(e)).collect(),
        videos: Vec::new(),
    };
    let mut data = SynthData {
        manifest: DatasetManifest::default(),
        features: BTreeMap::new(),
        descriptors: BTreeMap::new(),
        proposals: BTreeMap::new(),
    };
    for (plan, (f, d, p)) in plans.iter().zip(videos) {
        let labels = match plan.content {
            Content::Background => vec![],
            Content::Positive(e) => vec![EventLabel { event: spec.event_name(e), role: LabelRole::Positive }],
            Content::NearMiss(e) => vec![EventLabel { event: spec.event_name(e), role: LabelRole::NearMiss }],
        };
        manifest.videos.push(VideoRecord {
            video_id: plan.id.clone(),
            feature_path: format!("features/{}.vfea", plan.id),
            duration_seconds: spec.frames as f64,
            role: plan.role,
            labels,
            descriptor_path: Some(format!("descriptors/{}.vfea", plan.id)),
            proposal_path: Some(format!("proposals/{}.txt", plan.id)),
        });
        data.features.insert(plan.id.clone(), f);
        data.descriptors.insert(plan.id.clone(), d);
        data.proposals.insert(plan.id.clone(), p);
    }
    data.manifest = manifest;
    Ok(data)
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Writes `manifest.jsonl` plus the feature, descriptor and proposal files
/// it references.
pub fn write_dataset(data: &SynthData, dir: &Path) -> Result<()> {
    data.manifest
        .videos
        .par_iter()
        .map(|v| {
            write_feature_file(&dir.join(&v.feature_path), &data.features[&v.video_id])?;
            if let Some(p) = &v.descriptor_path {
                let set = descriptors_to_feature_set(&v.video_id, &data.descriptors[&v.video_id])?;
                write_feature_file(&dir.join(p), &set)?;
            }
            if let Some(p) = &v.proposal_path {
                write_atomic(&dir.join(p), data.proposals[&v.video_id].to_text().as_bytes())?;
            }
            Ok(())
        })
        .collect::<Result<()>>()?;
    write_atomic(&dir.join(MANIFEST_FILE), data.manifest.to_jsonl().as_bytes())
}

pub fn synth_to_dir(spec: &SynthSpec, dir: &Path) -> Result<SynthData> {
    let data = generate(spec)?;
    write_dataset(&data, dir)?;
    Ok(data)
}
