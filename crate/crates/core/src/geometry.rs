//! Frame sampling plans, the ten-patch layout, spatial-pyramid regions and
//! objectness-derived foreground boxes.
//!
//! Patch ids are 1-based. Ids 1–9 form a 3×3 grid of half-height squares in
//! row-major order, id 10 is the centered full-height square, and id 11 is
//! reserved for the objectness foreground crop.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const GRID_PATCHES: usize = 9;
pub const FULL_FRAME_PATCH: usize = 10;
pub const FOREGROUND_PATCH: usize = 11;

const MIN_SAMPLED_FRAMES: usize = 50;
const MAX_SAMPLED_FRAMES: usize = 120;

/// Default fraction of the peak proposal count kept as foreground.
pub const DEFAULT_OBJECTNESS_ALPHA: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePlan {
    pub total_frames: usize,
    pub fps: f64,
    pub sampled_indices: Vec<usize>,
}

/// Uniform frame sampling at roughly one frame per second, clamped to
/// 50..=120 frames and never more than the clip has.
pub fn plan_frame_samples(total_frames: usize, fps: f64) -> Result<FramePlan> {
    if total_frames == 0 {
        return Err(Error::invalid("total_frames must be at least 1"));
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::invalid(format!("fps must be positive, got {fps}")));
    }
    let seconds = (total_frames as f64 / fps).round();
    let target = (seconds as usize).clamp(MIN_SAMPLED_FRAMES, MAX_SAMPLED_FRAMES);
    let target = target.min(total_frames);

    let mut sampled_indices: Vec<usize> = Vec::with_capacity(target);
    for i in 0..target {
        // floor((i + 0.5) * total / target) in exact integer arithmetic
        let idx = ((2 * i + 1) * total_frames) / (2 * target);
        if sampled_indices.last() != Some(&idx) {
            sampled_indices.push(idx);
        }
    }
    Ok(FramePlan {
        total_frames,
        fps,
        sampled_indices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub id: usize,
    pub center_x: u32,
    pub center_y: u32,
    pub side: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchLayout {
    pub frame_width: u32,
    pub frame_height: u32,
    pub patches: Vec<Patch>,
}

impl PatchLayout {
    /// Pixel rectangle of a patch, shifted (never resized) to stay inside the frame.
    pub fn rect(&self, patch: &Patch) -> BBox {
        let half = patch.side / 2;
        let x0 = patch
            .center_x
            .saturating_sub(half)
            .min(self.frame_width - patch.side);
        let y0 = patch
            .center_y
            .saturating_sub(half)
            .min(self.frame_height - patch.side);
        BBox {
            x_min: x0,
            y_min: y0,
            x_max: x0 + patch.side,
            y_max: y0 + patch.side,
        }
    }

    pub fn get(&self, id: usize) -> Option<&Patch> {
        self.patches.iter().find(|p| p.id == id)
    }
}

pub fn build_patch_layout(frame_width: u32, frame_height: u32) -> Result<PatchLayout> {
    if frame_height < 2 {
        return Err(Error::invalid(format!(
            "frame height must be at least 2, got {frame_height}"
        )));
    }
    if frame_width < frame_height {
        return Err(Error::invalid(format!(
            "portrait frame {frame_width}x{frame_height}; rotate before extraction"
        )));
    }
    let side = frame_height / 2;
    let xs = [side / 2, frame_width / 2, frame_width - side / 2];
    let ys = [side / 2, frame_height / 2, frame_height - side / 2];

    let mut patches = Vec::with_capacity(10);
    for (row, &cy) in ys.iter().enumerate() {
        for (col, &cx) in xs.iter().enumerate() {
            patches.push(Patch {
                id: row * 3 + col + 1,
                center_x: cx,
                center_y: cy,
                side,
            });
        }
    }
    patches.push(Patch {
        id: FULL_FRAME_PATCH,
        center_x: frame_width / 2,
        center_y: frame_height / 2,
        side: frame_height,
    });
    Ok(PatchLayout {
        frame_width,
        frame_height,
        patches,
    })
}

/// Ordered list of patch-id sets; pooled region vectors are concatenated in
/// this order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub regions: Vec<Vec<usize>>,
}

impl RegionSpec {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Every patch id any region refers to, ascending.
    pub fn patch_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.regions.iter().flatten().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// No spatial expansion: the full-frame patch alone.
    pub fn full_frame() -> Self {
        RegionSpec {
            regions: vec![vec![FULL_FRAME_PATCH]],
        }
    }

    /// Foreground crop followed by the full frame.
    pub fn objectness() -> Self {
        RegionSpec {
            regions: vec![vec![FOREGROUND_PATCH], vec![FULL_FRAME_PATCH]],
        }
    }
}

/// The eight-region pyramid: full frame, three horizontal bands, and the four
/// overlapping 2×2 blocks of the 3×3 grid.
pub fn standard_region_spec() -> RegionSpec {
    RegionSpec {
        regions: vec![
            (1..=10).collect(),
            vec![1, 2, 3],
            vec![4, 5, 6],
            vec![7, 8, 9],
            vec![1, 2, 4, 5],
            vec![2, 3, 5, 6],
            vec![4, 5, 7, 8],
            vec![5, 6, 8, 9],
        ],
    }
}

/// Half-open pixel rectangle `[x_min, x_max) × [y_min, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self> {
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::invalid(format!(
                "degenerate box ({x_min},{y_min})-({x_max},{y_max})"
            )));
        }
        Ok(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn full(frame_width: u32, frame_height: u32) -> Self {
        BBox {
            x_min: 0,
            y_min: 0,
            x_max: frame_width,
            y_max: frame_height,
        }
    }

    pub fn within(&self, frame_width: u32, frame_height: u32) -> bool {
        self.x_min < self.x_max
            && self.y_min < self.y_max
            && self.x_max <= frame_width
            && self.y_max <= frame_height
    }

    pub fn area(&self) -> u64 {
        u64::from(self.x_max - self.x_min) * u64::from(self.y_max - self.y_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Foreground {
    pub bbox: BBox,
    /// Set when there were no proposals and the full frame was returned.
    pub fallback: bool,
}

/// Thresholds the per-pixel proposal coverage count at `alpha * max` and
/// returns the tight bounding box of the surviving pixels.
pub fn objectness_foreground(
    proposals: &[BBox],
    frame_width: u32,
    frame_height: u32,
    alpha: f64,
) -> Result<Foreground> {
    if frame_width == 0 || frame_height == 0 {
        return Err(Error::invalid("frame dimensions must be positive"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if proposals.is_empty() {
        return Ok(Foreground {
            bbox: BBox::full(frame_width, frame_height),
            fallback: true,
        });
    }
    if let Some(b) = proposals.iter().find(|b| !b.within(frame_width, frame_height)) {
        return Err(Error::invalid(format!(
            "proposal {b:?} outside {frame_width}x{frame_height} frame"
        )));
    }

    let w = frame_width as usize;
    let h = frame_height as usize;
    // 2-D difference array, then prefix sums give the coverage count.
    let stride = w + 1;
    let mut diff = vec![0i64; stride * (h + 1)];
    for b in proposals {
        let (x0, y0, x1, y1) = (
            b.x_min as usize,
            b.y_min as usize,
            b.x_max as usize,
            b.y_max as usize,
        );
        diff[y0 * stride + x0] += 1;
        diff[y0 * stride + x1] -= 1;
        diff[y1 * stride + x0] -= 1;
        diff[y1 * stride + x1] += 1;
    }
    let mut counts = vec![0i64; w * h];
    for y in 0..h {
        let mut row_acc = 0i64;
        for x in 0..w {
            row_acc += diff[y * stride + x];
            let above = if y > 0 { counts[(y - 1) * w + x] } else { 0 };
            counts[y * w + x] = row_acc + above;
        }
    }

    let peak = counts.iter().copied().max().unwrap_or(0);
    let threshold = alpha * peak as f64;
    let (mut x_min, mut y_min, mut x_max, mut y_max) = (usize::MAX, usize::MAX, 0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            if counts[y * w + x] as f64 >= threshold {
                x_min = x_min.min(x);
                y_min = y_min.min(y);
                x_max = x_max.max(x + 1);
                y_max = y_max.max(y + 1);
            }
        }
    }
    Ok(Foreground {
        bbox: BBox {
            x_min: x_min as u32,
            y_min: y_min as u32,
            x_max: x_max as u32,
            y_max: y_max as u32,
        },
        fallback: false,
    })
}
