//! Sequential minimal optimization for the soft-margin SVM dual
//!
//!   min_α  ½ αᵀQα − eᵀα   s.t.  yᵀα = 0,  0 ≤ α ≤ C,   Q_ij = y_i y_j K(x_i, x_j)
//!
//! using the maximal-violating-pair working set.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rayon::prelude::*;

use super::kernel::KernelSpec;

/// Training sets up to this size get a fully precomputed Gram matrix.
pub const FULL_GRAM_LIMIT: usize = 8192;

const TAU: f64 = 1e-12;

/// Row access to the kernel matrix.
pub(crate) enum KernelRows<'a> {
    Full(Vec<Arc<[f64]>>),
    Cached(LruRows<'a>),
}

pub(crate) struct LruRows<'a> {
    rows: &'a [Vec<f64>],
    spec: KernelSpec,
    capacity: usize,
    clock: u64,
    entries: HashMap<usize, (Arc<[f64]>, u64)>,
    by_age: BTreeMap<u64, usize>,
}

impl<'a> KernelRows<'a> {
    pub(crate) fn new(rows: &'a [Vec<f64>], spec: KernelSpec, cache_rows: usize) -> Self {
        let n = rows.len();
        if n <= FULL_GRAM_LIMIT {
            let full = (0..n)
                .into_par_iter()
                .map(|i| compute_row(rows, &spec, i))
                .collect();
            KernelRows::Full(full)
        } else {
            KernelRows::Cached(LruRows {
                rows,
                spec,
                capacity: cache_rows.max(2),
                clock: 0,
                entries: HashMap::new(),
                by_age: BTreeMap::new(),
            })
        }
    }

    pub(crate) fn row(&mut self, i: usize) -> Arc<[f64]> {
        match self {
            KernelRows::Full(rows) => rows[i].clone(),
            KernelRows::Cached(lru) => lru.row(i),
        }
    }
}

impl LruRows<'_> {
    fn row(&mut self, i: usize) -> Arc<[f64]> {
        self.clock += 1;
        let now = self.clock;
        if let Some((row, age)) = self.entries.get_mut(&i) {
            self.by_age.remove(age);
            *age = now;
            self.by_age.insert(now, i);
            return row.clone();
        }
        if self.entries.len() >= self.capacity {
            if let Some((_, oldest)) = self.by_age.pop_first() {
                self.entries.remove(&oldest);
            }
        }
        let row = compute_row(self.rows, &self.spec, i);
        self.entries.insert(i, (row.clone(), now));
        self.by_age.insert(now, i);
        row
    }
}

fn compute_row(rows: &[Vec<f64>], spec: &KernelSpec, i: usize) -> Arc<[f64]> {
    rows.iter().map(|r| spec.eval_unchecked(&rows[i], r)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoSolution {
    /// Dual variables, one per training row, in [0, C].
    pub alpha: Vec<f64>,
    pub bias: f64,
    /// Maximal KKT violation `max_{I_up} −y∇f − min_{I_low} −y∇f` at exit.
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves the dual with box bound `c`, stopping once the maximal violation
/// drops to `tol` or after `max_iter` pair updates.
pub(crate) fn solve(
    kernel: &mut KernelRows<'_>,
    labels: &[bool],
    c: f64,
    tol: f64,
    max_iter: usize,
) -> SmoSolution {
    let n = labels.len();
    let y: Vec<f64> = labels.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
    let qd: Vec<f64> = (0..n).map(|i| kernel.row(i)[i]).collect();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];

    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    let mut gap;
    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > gmax {
                gmax = v;
                i = t;
            }
            if in_low(alpha[t], y[t]) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        gap = gmax - gmin;
        if i == usize::MAX || j == usize::MAX || gap <= tol {
            break;
        }
        if iterations >= max_iter {
            log::warn!("SMO stopped at {max_iter} iterations with violation {gap:.3e}");
            return SmoSolution {
                bias: compute_bias(&alpha, &grad, &y, c),
                alpha,
                gap,
                iterations,
                converged: false,
            };
        }
        iterations += 1;

        let ki = kernel.row(i);
        let kj = kernel.row(j);
        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        let (mut ai, mut aj) = (old_ai, old_aj);
        let quad = (qd[i] + qd[j] - 2.0 * ki[j]).max(TAU);

        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;

        let di = (ai - old_ai) * y[i];
        let dj = (aj - old_aj) * y[j];
        for t in 0..n {
            grad[t] += y[t] * (ki[t] * di + kj[t] * dj);
        }
    }

    SmoSolution {
        bias: compute_bias(&alpha, &grad, &y, c),
        alpha,
        gap,
        iterations,
        converged: true,
    }
}

/// Bias from free support vectors, or the midpoint of the feasible interval
/// when every α sits at a bound.
fn compute_bias(alpha: &[f64], grad: &[f64], y: &[f64], c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_sum += yg;
            free_count += 1;
        }
    }
    let rho = if free_count > 0 {
        free_sum / free_count as f64
    } else {
        0.5 * (ub + lb)
    };
    -rho
}

#[cfg(test)]
impl<'a> LruRows<'a> {
    pub(crate) fn for_test(rows: &'a [Vec<f64>], spec: KernelSpec, capacity: usize) -> Self {
        LruRows {
            rows,
            spec,
            capacity,
            clock: 0,
            entries: HashMap::new(),
            by_age: BTreeMap::new(),
        }
    }
}
