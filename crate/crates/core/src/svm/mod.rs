//! Binary kernel SVMs: kernels, SMO training, margins and Platt posteriors.

mod kernel;
mod platt;
mod smo;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use kernel::{default_gamma, kernel_eval, KernelKind, KernelSpec, GAMMA_SAMPLE_PAIRS};
pub use platt::{platt_fit, platt_nll, platt_targets, sigmoid_posterior, PlattParams};
pub use smo::{SmoSolution, FULL_GRAM_LIMIT};

/// Box constraint used when a run does not set one.
pub const DEFAULT_C_HIDDEN: f64 = 1.0;
pub const DEFAULT_C_OUTPUT: f64 = 10.0;
pub const DEFAULT_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub c: f64,
    /// Stop once the maximal KKT violation is at most this.
    pub tol: f64,
    /// Pair-update budget; `None` means `max(10⁷, 100·N)`.
    pub max_iter: Option<usize>,
    /// Kernel rows kept when the Gram matrix is too large to precompute.
    pub cache_rows: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            c: DEFAULT_C_HIDDEN,
            tol: DEFAULT_TOL,
            max_iter: None,
            cache_rows: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: KernelSpec,
    pub c: f64,
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i · y_i` for each support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    #[serde(default)]
    pub platt: Option<PlattParams>,
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.first().map_or(0, |v| v.len())
    }
}

fn check_problem(rows: &[Vec<f64>], labels: &[bool], kernel: &KernelSpec, c: f64) -> Result<()> {
    if rows.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} rows but {} labels",
            rows.len(),
            labels.len()
        )));
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::invalid("SVM training needs both classes"));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!("C must be positive, got {c}")));
    }
    let d = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != d {
            return Err(Error::invalid(format!("row {i} has length {}, expected {d}", r.len())));
        }
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("row {i} has a non-finite entry")));
        }
        kernel.check_input(r)?;
    }
    Ok(())
}

/// Runs SMO and returns the raw dual solution (every α, not just support
/// vectors).
pub fn smo_solve(
    rows: &[Vec<f64>],
    labels: &[bool],
    kernel: &KernelSpec,
    params: &TrainParams,
) -> Result<SmoSolution> {
    check_problem(rows, labels, kernel, params.c)?;
    let n = rows.len();
    let max_iter = params.max_iter.unwrap_or_else(|| (100 * n).max(10_000_000));
    let mut k = smo::KernelRows::new(rows, *kernel, params.cache_rows);
    Ok(smo::solve(&mut k, labels, params.c, params.tol, max_iter))
}

pub fn svm_train(
    rows: &[Vec<f64>],
    labels: &[bool],
    kernel: &KernelSpec,
    params: &TrainParams,
) -> Result<SvmModel> {
    let sol = smo_solve(rows, labels, kernel, params)?;
    let mut support_vectors = Vec::new();
    let mut dual_coef = Vec::new();
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            support_vectors.push(rows[i].clone());
            dual_coef.push(if labels[i] { a } else { -a });
        }
    }
    if support_vectors.is_empty() {
        return Err(Error::Numerical("SMO finished with no support vectors".into()));
    }
    Ok(SvmModel {
        kernel: *kernel,
        c: params.c,
        support_vectors,
        dual_coef,
        bias: sol.bias,
        platt: None,
    })
}

/// `Σ_i (α_i y_i) K(sv_i, x) + b`
pub fn svm_margin(model: &SvmModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim() {
        return Err(Error::invalid(format!(
            "input has length {}, model expects {}",
            x.len(),
            model.dim()
        )));
    }
    model.kernel.check_input(x)?;
    let s: f64 = model
        .support_vectors
        .iter()
        .zip(&model.dual_coef)
        .map(|(sv, &coef)| coef * model.kernel.eval_unchecked(sv, x))
        .sum();
    Ok(s + model.bias)
}

pub fn svm_posterior(model: &SvmModel, x: &[f64]) -> Result<f64> {
    let platt = model
        .platt
        .ok_or_else(|| Error::InvalidState("model has no Platt calibration".into()))?;
    Ok(platt.posterior(svm_margin(model, x)?))
}
