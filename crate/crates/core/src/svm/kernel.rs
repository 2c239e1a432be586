use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Rbf,
    Chi2,
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Linear => "linear",
            KernelKind::Rbf => "rbf",
            KernelKind::Chi2 => "chi2",
        })
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(KernelKind::Linear),
            "rbf" => Ok(KernelKind::Rbf),
            "chi2" => Ok(KernelKind::Chi2),
            _ => Err(Error::invalid(format!("unknown kernel '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Bandwidth for rbf/chi2; ignored by the linear kernel.
    pub gamma: f64,
}

impl KernelSpec {
    pub fn linear() -> Self {
        KernelSpec {
            kind: KernelKind::Linear,
            gamma: 1.0,
        }
    }

    pub fn rbf(gamma: f64) -> Result<Self> {
        Self::new(KernelKind::Rbf, gamma)
    }

    pub fn chi2(gamma: f64) -> Result<Self> {
        Self::new(KernelKind::Chi2, gamma)
    }

    pub fn new(kind: KernelKind, gamma: f64) -> Result<Self> {
        if kind != KernelKind::Linear && !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("{kind} kernel needs gamma > 0, got {gamma}")));
        }
        Ok(KernelSpec { kind, gamma })
    }

    /// Rejects inputs the kernel is undefined on (negative entries for χ²).
    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if self.kind == KernelKind::Chi2 {
            if let Some((i, v)) = x.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
                return Err(Error::invalid(format!(
                    "chi2 kernel needs non-negative entries; entry {i} is {v}"
                )));
            }
        }
        Ok(())
    }

    /// Kernel value without input validation.
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Linear => dot(x, y),
            KernelKind::Rbf => (-self.gamma * squared_euclidean(x, y)).exp(),
            KernelKind::Chi2 => (-self.gamma * chi2_distance(x, y)).exp(),
        }
    }
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub(crate) fn squared_euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `Σ (xᵢ − yᵢ)² / (xᵢ + yᵢ)`, with 0/0 terms taken as 0.
pub(crate) fn chi2_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let s = a + b;
            if s == 0.0 {
                0.0
            } else {
                (a - b) * (a - b) / s
            }
        })
        .sum()
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "kernel inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    spec.check_input(x)?;
    spec.check_input(y)?;
    Ok(spec.eval_unchecked(x, y))
}

/// Pair budget for the median heuristic.
pub const GAMMA_SAMPLE_PAIRS: usize = 1000;

/// `1 / median` of pairwise squared Euclidean (rbf) or χ² (chi2) distances.
///
/// All pairs are used when there are at most [`GAMMA_SAMPLE_PAIRS`] of them;
/// otherwise that many pairs are drawn with the given seed. Falls back to
/// 1.0 when the median is zero. The linear kernel always gets 1.0.
pub fn default_gamma(rows: &[Vec<f64>], kind: KernelKind, seed: u64) -> Result<f64> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::invalid(format!("gamma heuristic needs at least 2 rows, got {n}")));
    }
    if kind == KernelKind::Linear {
        return Ok(1.0);
    }
    let dist = |i: usize, j: usize| match kind {
        KernelKind::Chi2 => chi2_distance(&rows[i], &rows[j]),
        _ => squared_euclidean(&rows[i], &rows[j]),
    };
    let total_pairs = n * (n - 1) / 2;
    let mut d: Vec<f64> = if total_pairs <= GAMMA_SAMPLE_PAIRS {
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| dist(i, j))
            .collect()
    } else {
        let mut rng = rng::seeded(seed);
        (0..GAMMA_SAMPLE_PAIRS)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                dist(i, j)
            })
            .collect()
    };
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let median = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if median > 0.0 && median.is_finite() {
        Ok(1.0 / median)
    } else {
        Ok(1.0)
    }
}
