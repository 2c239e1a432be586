use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gmm::{model_log_norms, posteriors_into, GmmModel};
use crate::{Error, Result};

/// Descriptors per parallel chunk; fixed so the reduction order never changes.
const CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherVector {
    pub values: Vec<f64>,
    pub power_normalized: bool,
    pub l2_normalized: bool,
    pub zero_order_included: bool,
}

impl FisherVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Output length for a model of `k` components over `d`-dimensional descriptors.
pub fn fv_dim(d: usize, k: usize, include_zero_order: bool) -> usize {
    2 * d * k + if include_zero_order { k } else { 0 }
}

#[derive(Clone)]
struct Accum {
    s0: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl Accum {
    fn zeros(k: usize, d: usize) -> Self {
        Accum {
            s0: vec![0.0; k],
            s1: vec![0.0; k * d],
            s2: vec![0.0; k * d],
        }
    }

    fn add(&mut self, other: &Accum) {
        for (a, b) in [(&mut self.s0, &other.s0), (&mut self.s1, &other.s1), (&mut self.s2, &other.s2)] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Unnormalized gradient blocks `[G_π] ‖ G_μ(1..K) ‖ G_σ(1..K)`.
pub fn fisher_gradients(
    model: &GmmModel,
    descriptors: &[Vec<f64>],
    include_zero_order: bool,
) -> Result<Vec<f64>> {
    let k = model.components();
    let d = model.dim();
    if descriptors.is_empty() {
        return Err(Error::invalid("Fisher encoding needs at least one descriptor"));
    }
    if let Some(i) = descriptors.iter().position(|x| x.len() != d) {
        return Err(Error::invalid(format!(
            "descriptor {i} has length {}, GMM expects {d}",
            descriptors[i].len()
        )));
    }
    let norms = model_log_norms(model);
    let inv_sd: Vec<Vec<f64>> = model
        .variances
        .iter()
        .map(|v| v.iter().map(|s| 1.0 / s.sqrt()).collect())
        .collect();

    let partials: Vec<Accum> = descriptors
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Accum::zeros(k, d);
            let mut gamma = vec![0.0; k];
            for x in chunk {
                posteriors_into(model, &norms, x, &mut gamma);
                for c in 0..k {
                    let g = gamma[c];
                    acc.s0[c] += g;
                    if g == 0.0 {
                        continue;
                    }
                    let mu = &model.means[c];
                    let base = c * d;
                    for j in 0..d {
                        let u = (x[j] - mu[j]) * inv_sd[c][j];
                        acc.s1[base + j] += g * u;
                        acc.s2[base + j] += g * (u * u - 1.0);
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = Accum::zeros(k, d);
    partials.iter().for_each(|p| total.add(p));

    let n = descriptors.len() as f64;
    let mut out = Vec::with_capacity(fv_dim(d, k, include_zero_order));
    if include_zero_order {
        for c in 0..k {
            let w = model.weights[c];
            out.push((total.s0[c] - n * w) / (n * w.sqrt()));
        }
    }
    for c in 0..k {
        let scale = 1.0 / (n * model.weights[c].sqrt());
        out.extend(total.s1[c * d..(c + 1) * d].iter().map(|v| v * scale));
    }
    for c in 0..k {
        let scale = 1.0 / (n * (2.0 * model.weights[c]).sqrt());
        out.extend(total.s2[c * d..(c + 1) * d].iter().map(|v| v * scale));
    }
    Ok(out)
}

/// Signed square root, elementwise.
pub fn power_normalize(v: &mut [f64]) {
    v.iter_mut().for_each(|z| *z = z.signum() * z.abs().sqrt());
}

pub fn fv_encode(
    model: &GmmModel,
    descriptors: &[Vec<f64>],
    include_zero_order: bool,
) -> Result<FisherVector> {
    let mut values = fisher_gradients(model, descriptors, include_zero_order)?;
    power_normalize(&mut values);
    let norm = crate::transform::l2_norm(&values);
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(FisherVector {
        values,
        power_normalized: true,
        l2_normalized: true,
        zero_order_included: include_zero_order,
    })
}
