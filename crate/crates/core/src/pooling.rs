//! Spatial pooling of per-patch CNN outputs into region vectors, and temporal
//! pooling of those across frames into one video-level vector.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::{standard_region_spec, RegionSpec};
use crate::transform::NormScheme;
use crate::{Error, Result};

/// Which CNN layer a feature set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    /// Softmax posteriors, values in [0, 1].
    Output,
    /// Rectified hidden activations, values ≥ 0.
    Hidden6,
    Hidden7,
    /// Anything else (low-level descriptors); no value constraints.
    Other,
}

impl Layer {
    pub fn tag(self) -> u32 {
        match self {
            Layer::Output => 0,
            Layer::Hidden6 => 1,
            Layer::Hidden7 => 2,
            Layer::Other => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Layer::Output),
            1 => Some(Layer::Hidden6),
            2 => Some(Layer::Hidden7),
            3 => Some(Layer::Other),
            _ => None,
        }
    }

    pub fn is_non_negative(self) -> bool {
        !matches!(self, Layer::Other)
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::Output => "output",
            Layer::Hidden6 => "hidden6",
            Layer::Hidden7 => "hidden7",
            Layer::Other => "other",
        })
    }
}

impl FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "output" => Ok(Layer::Output),
            "hidden6" => Ok(Layer::Hidden6),
            "hidden7" => Ok(Layer::Hidden7),
            "other" => Ok(Layer::Other),
            _ => Err(Error::invalid(format!("unknown layer '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Avg,
}

impl fmt::Display for PoolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolMode::Max => "max",
            PoolMode::Avg => "avg",
        })
    }
}

impl FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(PoolMode::Max),
            "avg" => Ok(PoolMode::Avg),
            _ => Err(Error::invalid(format!("unknown pooling mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionScheme {
    /// Full-frame patch only.
    None,
    /// Eight-region spatial pyramid.
    Sp8,
    /// Foreground crop concatenated with the full frame.
    Objectness,
}

impl RegionScheme {
    pub fn spec(self) -> RegionSpec {
        match self {
            RegionScheme::None => RegionSpec::full_frame(),
            RegionScheme::Sp8 => standard_region_spec(),
            RegionScheme::Objectness => RegionSpec::objectness(),
        }
    }
}

impl fmt::Display for RegionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegionScheme::None => "none",
            RegionScheme::Sp8 => "sp8",
            RegionScheme::Objectness => "objectness",
        })
    }
}

impl FromStr for RegionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RegionScheme::None),
            "sp8" => Ok(RegionScheme::Sp8),
            "objectness" => Ok(RegionScheme::Objectness),
            _ => Err(Error::invalid(format!("unknown region scheme '{s}'"))),
        }
    }
}

/// Per-patch vectors of one frame, keyed by patch id.
pub type PatchMap = BTreeMap<usize, Vec<f32>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub patches: PatchMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureSet {
    pub video_id: String,
    pub layer: Layer,
    pub dim: usize,
    pub frames: Vec<Frame>,
}

impl FrameFeatureSet {
    pub fn validate(&self) -> Result<()> {
        let mut prev: Option<usize> = None;
        for frame in &self.frames {
            if prev.is_some_and(|p| frame.index <= p) {
                return Err(Error::data(format!(
                    "{}: frame indices not strictly increasing at {}",
                    self.video_id, frame.index
                )));
            }
            prev = Some(frame.index);
            for (id, v) in &frame.patches {
                if v.len() != self.dim {
                    return Err(Error::data(format!(
                        "{}: frame {} patch {id} has length {}, expected {}",
                        self.video_id,
                        frame.index,
                        v.len(),
                        self.dim
                    )));
                }
                let bad = match self.layer {
                    Layer::Output => v.iter().find(|x| !(0.0..=1.0).contains(*x)),
                    Layer::Hidden6 | Layer::Hidden7 => v.iter().find(|x| !(**x >= 0.0)),
                    Layer::Other => v.iter().find(|x| !x.is_finite()),
                };
                if let Some(x) = bad {
                    return Err(Error::data(format!(
                        "{}: frame {} patch {id} value {x} violates {} layer range",
                        self.video_id, frame.index, self.layer
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub layer: Layer,
    pub regions: RegionScheme,
    pub spatial: PoolMode,
    pub temporal: PoolMode,
    pub norm: Option<NormScheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca_dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeature {
    pub video_id: String,
    pub vector: Vec<f64>,
    pub provenance: Provenance,
}

fn pool_into(acc: &mut [f64], v: &[f32], mode: PoolMode) {
    match mode {
        PoolMode::Max => {
            for (a, &x) in acc.iter_mut().zip(v) {
                *a = a.max(f64::from(x));
            }
        }
        PoolMode::Avg => {
            for (a, &x) in acc.iter_mut().zip(v) {
                *a += f64::from(x);
            }
        }
    }
}

/// Pools each region's member patches element-wise and concatenates the
/// region vectors in spec order.
pub fn pool_spatial(frame: &PatchMap, regions: &RegionSpec, mode: PoolMode) -> Result<Vec<f64>> {
    let dim = match frame.values().next() {
        Some(v) => v.len(),
        None => return Err(Error::data("frame has no patches")),
    };
    let mut out = Vec::with_capacity(dim * regions.len());
    for region in &regions.regions {
        if region.is_empty() {
            return Err(Error::invalid("empty region in region spec"));
        }
        let init = match mode {
            PoolMode::Max => f64::NEG_INFINITY,
            PoolMode::Avg => 0.0,
        };
        let mut acc = vec![init; dim];
        for id in region {
            let v = frame
                .get(id)
                .ok_or_else(|| Error::data(format!("missing patch id {id}")))?;
            if v.len() != dim {
                return Err(Error::data(format!(
                    "patch {id} has length {}, expected {dim}",
                    v.len()
                )));
            }
            pool_into(&mut acc, v, mode);
        }
        if mode == PoolMode::Avg {
            let n = region.len() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
        }
        out.extend(acc);
    }
    Ok(out)
}

/// `[foreground ‖ fullframe]` for a frame carrying the foreground crop.
pub fn pool_objectness(frame: &PatchMap, mode: PoolMode) -> Result<Vec<f64>> {
    pool_spatial(frame, &RegionSpec::objectness(), mode)
}

pub fn pool_temporal(frames: &[Vec<f64>], mode: PoolMode) -> Result<Vec<f64>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("temporal pooling needs at least one frame"))?;
    let dim = first.len();
    let mut acc = first.clone();
    for (i, f) in frames.iter().enumerate().skip(1) {
        if f.len() != dim {
            return Err(Error::invalid(format!(
                "frame {i} has length {}, expected {dim}",
                f.len()
            )));
        }
        match mode {
            PoolMode::Max => acc.iter_mut().zip(f).for_each(|(a, &x)| *a = a.max(x)),
            PoolMode::Avg => acc.iter_mut().zip(f).for_each(|(a, &x)| *a += x),
        }
    }
    if mode == PoolMode::Avg {
        let n = frames.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    Ok(acc)
}

/// Spatial pooling per frame, then temporal pooling across frames. The
/// result is not normalized; see [`crate::transform::normalize`].
pub fn aggregate_video(
    features: &FrameFeatureSet,
    scheme: RegionScheme,
    spatial: PoolMode,
    temporal: PoolMode,
) -> Result<VideoFeature> {
    features.validate()?;
    let regions = scheme.spec();
    let per_frame = features
        .frames
        .iter()
        .map(|f| {
            pool_spatial(&f.patches, &regions, spatial)
                .map_err(|e| Error::data(format!("{} frame {}: {e}", features.video_id, f.index)))
        })
        .collect::<Result<Vec<_>>>()?;
    if per_frame.is_empty() {
        return Err(Error::data(format!("{}: no frames", features.video_id)));
    }
    let vector = pool_temporal(&per_frame, temporal)?;
    Ok(VideoFeature {
        video_id: features.video_id.clone(),
        vector,
        provenance: Provenance {
            layer: features.layer,
            regions: scheme,
            spatial,
            temporal,
            norm: None,
            pca_dim: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FOREGROUND_PATCH, FULL_FRAME_PATCH};
    use proptest::prelude::*;

    fn frame_with(dim: usize, ids: impl IntoIterator<Item = usize>, f: impl Fn(usize, usize) -> f32) -> PatchMap {
        ids.into_iter()
            .map(|id| (id, (0..dim).map(|k| f(id, k)).collect()))
            .collect()
    }

    #[test]
    fn sp8_expands_dimension_eightfold() {
        let frame = frame_with(1000, 1..=10, |id, k| ((id * 7 + k) % 13) as f32 / 13.0);
        let v = pool_spatial(&frame, &standard_region_spec(), PoolMode::Max).unwrap();
        assert_eq!(v.len(), 8000);
    }

    #[test]
    fn single_member_region_is_identity() {
        let frame = frame_with(4, 1..=10, |id, k| (id * 10 + k) as f32);
        let spec = RegionSpec { regions: vec![vec![3]] };
        for mode in [PoolMode::Max, PoolMode::Avg] {
            let v = pool_spatial(&frame, &spec, mode).unwrap();
            assert_eq!(v, vec![30.0, 31.0, 32.0, 33.0]);
        }
    }

    #[test]
    fn two_member_region() {
        let mut frame = PatchMap::new();
        frame.insert(1, vec![2.0, 0.0]);
        frame.insert(2, vec![0.0, 3.0]);
        let spec = RegionSpec { regions: vec![vec![1, 2]] };
        assert_eq!(pool_spatial(&frame, &spec, PoolMode::Max).unwrap(), vec![2.0, 3.0]);
        assert_eq!(pool_spatial(&frame, &spec, PoolMode::Avg).unwrap(), vec![1.0, 1.5]);
    }

    #[test]
    fn missing_patch_names_the_id() {
        let frame = frame_with(2, 1..=9, |_, _| 1.0);
        let err = pool_spatial(&frame, &standard_region_spec(), PoolMode::Max).unwrap_err();
        assert!(matches!(err, Error::DataIntegrity(ref m) if m.contains("10")), "{err}");
    }

    #[test]
    fn objectness_concatenates_foreground_then_full_frame() {
        for dim in [4096, 1000] {
            let frame = frame_with(dim, [FULL_FRAME_PATCH, FOREGROUND_PATCH], |id, _| id as f32);
            let v = pool_objectness(&frame, PoolMode::Max).unwrap();
            assert_eq!(v.len(), 2 * dim);
            assert_eq!(v[0], FOREGROUND_PATCH as f64);
            assert_eq!(v[dim], FULL_FRAME_PATCH as f64);
        }
        let frame = frame_with(3, [FULL_FRAME_PATCH, FOREGROUND_PATCH], |_, k| k as f32);
        assert_eq!(
            pool_objectness(&frame, PoolMode::Avg).unwrap(),
            vec![0.0, 1.0, 2.0, 0.0, 1.0, 2.0]
        );
        let only_full = frame_with(3, [FULL_FRAME_PATCH], |_, _| 1.0);
        assert!(matches!(pool_objectness(&only_full, PoolMode::Max), Err(Error::DataIntegrity(_))));
    }

    #[test]
    fn temporal_pooling() {
        let frames = vec![vec![1.0, 5.0], vec![3.0, 2.0]];
        assert_eq!(pool_temporal(&frames, PoolMode::Max).unwrap(), vec![3.0, 5.0]);
        assert_eq!(pool_temporal(&frames, PoolMode::Avg).unwrap(), vec![2.0, 3.5]);
        assert_eq!(pool_temporal(&frames[..1], PoolMode::Avg).unwrap(), frames[0]);
        assert!(matches!(pool_temporal(&[], PoolMode::Max), Err(Error::InvalidArgument(_))));
    }

    fn video(frames: Vec<PatchMap>, layer: Layer, dim: usize) -> FrameFeatureSet {
        FrameFeatureSet {
            video_id: "v".into(),
            layer,
            dim,
            frames: frames
                .into_iter()
                .enumerate()
                .map(|(index, patches)| Frame { index, patches })
                .collect(),
        }
    }

    #[test]
    fn hidden_layer_sp8_dimension() {
        let frame = frame_with(4096, 1..=10, |id, k| ((id + k) % 5) as f32);
        let vf = aggregate_video(
            &video(vec![frame.clone(), frame], Layer::Hidden6, 4096),
            RegionScheme::Sp8,
            PoolMode::Max,
            PoolMode::Max,
        )
        .unwrap();
        assert_eq!(vf.vector.len(), 32_768);
        assert_eq!(vf.provenance.regions, RegionScheme::Sp8);
    }

    #[test]
    fn single_frame_singleton_regions_concatenate_patches() {
        let frame = frame_with(2, 1..=3, |id, k| (id * 2 + k) as f32);
        let spec = RegionSpec { regions: vec![vec![1], vec![2], vec![3]] };
        let v = pool_spatial(&frame, &spec, PoolMode::Avg).unwrap();
        assert_eq!(v, vec![2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn identical_frames_ignore_temporal_mode() {
        let frame = frame_with(5, 1..=11, |id, k| (id * k) as f32 / 7.0);
        let vs = video(vec![frame.clone(), frame.clone(), frame], Layer::Hidden7, 5);
        for scheme in [RegionScheme::None, RegionScheme::Sp8, RegionScheme::Objectness] {
            let a = aggregate_video(&vs, scheme, PoolMode::Max, PoolMode::Max).unwrap();
            let b = aggregate_video(&vs, scheme, PoolMode::Max, PoolMode::Avg).unwrap();
            for (x, y) in a.vector.iter().zip(&b.vector) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_range_checked() {
        let frame = frame_with(2, 1..=10, |_, _| 1.5);
        let vs = video(vec![frame], Layer::Output, 2);
        assert!(aggregate_video(&vs, RegionScheme::None, PoolMode::Max, PoolMode::Max).is_err());
        let frame = frame_with(2, 1..=10, |_, _| -0.5);
        let vs = video(vec![frame], Layer::Hidden6, 2);
        assert!(aggregate_video(&vs, RegionScheme::None, PoolMode::Max, PoolMode::Max).is_err());
    }

    fn arb_frames() -> impl Strategy<Value = Vec<PatchMap>> {
        proptest::collection::vec(proptest::collection::vec(0.0f32..10.0, 11 * 3), 1..6).prop_map(|fs| {
            fs.into_iter()
                .map(|vals| (1..=11).map(|id| (id, vals[(id - 1) * 3..id * 3].to_vec())).collect())
                .collect()
        })
    }

    proptest! {
        #[test]
        fn frame_order_does_not_matter(frames in arb_frames(), mode_max in any::<bool>()) {
            let temporal = if mode_max { PoolMode::Max } else { PoolMode::Avg };
            let a = aggregate_video(&video(frames.clone(), Layer::Hidden7, 3), RegionScheme::Sp8, PoolMode::Max, temporal).unwrap();
            let mut rev = frames;
            rev.reverse();
            let b = aggregate_video(&video(rev, Layer::Hidden7, 3), RegionScheme::Sp8, PoolMode::Max, temporal).unwrap();
            for (x, y) in a.vector.iter().zip(&b.vector) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }

        #[test]
        fn max_dominates_avg(frames in arb_frames()) {
            let vs = video(frames, Layer::Hidden6, 3);
            let mx = aggregate_video(&vs, RegionScheme::Sp8, PoolMode::Max, PoolMode::Max).unwrap();
            let av = aggregate_video(&vs, RegionScheme::Sp8, PoolMode::Avg, PoolMode::Avg).unwrap();
            for (x, y) in mx.vector.iter().zip(&av.vector) {
                prop_assert!(*x >= *y - 1e-9);
            }
        }

        #[test]
        fn max_pooling_ignores_duplicated_members(frames in arb_frames(), dup in 0usize..8) {
            let spec = standard_region_spec();
            let mut doubled = spec.clone();
            let extra = doubled.regions[dup][0];
            doubled.regions[dup].push(extra);
            prop_assert_eq!(
                pool_spatial(&frames[0], &spec, PoolMode::Max).unwrap(),
                pool_spatial(&frames[0], &doubled, PoolMode::Max).unwrap()
            );
        }

        #[test]
        fn output_dimension_formula(frames in arb_frames()) {
            let one = RegionSpec { regions: vec![vec![1, 2]] };
            let two = RegionSpec { regions: vec![vec![1], vec![4, 7, 10]] };
            for spec in [one, two, standard_region_spec()] {
                let v = pool_spatial(&frames[0], &spec, PoolMode::Avg).unwrap();
                prop_assert_eq!(v.len(), 3 * spec.len());
            }
        }
    }
}
