use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Smallest variance floor ever applied, for constant data.
const MIN_VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    pub components: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop when the relative log-likelihood gain falls below this.
    pub tol: f64,
    /// Variance floor as a fraction of the mean per-dimension data variance.
    pub variance_floor_ratio: f64,
}

impl Default for GmmParams {
    fn default() -> Self {
        GmmParams {
            components: 256,
            seed: 0,
            max_iters: 100,
            tol: 1e-5,
            variance_floor_ratio: 1e-4,
        }
    }
}

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub variance_floor: f64,
}

impl GmmModel {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    /// Per-component constant `ln π_k − ½ Σ_j ln(2π σ²_kj)`.
    fn log_norms(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.variances)
            .map(|(w, var)| w.ln() - 0.5 * var.iter().map(|v| LN_2PI + v.ln()).sum::<f64>())
            .collect()
    }

    /// Fills `out` with `ln π_k N(x; μ_k, σ²_k)` and returns `ln p(x)`.
    fn joint_log_densities(&self, log_norms: &[f64], x: &[f64], out: &mut [f64]) -> f64 {
        for (k, o) in out.iter_mut().enumerate() {
            let maha: f64 = x
                .iter()
                .zip(&self.means[k])
                .zip(&self.variances[k])
                .map(|((xi, m), v)| (xi - m) * (xi - m) / v)
                .sum();
            *o = log_norms[k] - 0.5 * maha;
        }
        log_sum_exp(out)
    }

    pub fn log_likelihood(&self, data: &[Vec<f64>]) -> f64 {
        let norms = self.log_norms();
        let mut buf = vec![0.0; self.components()];
        data.iter()
            .map(|x| self.joint_log_densities(&norms, x, &mut buf))
            .sum()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Responsibilities `γ_k(x) ∝ π_k N(x; μ_k, σ²_k)`, computed in log space.
pub fn gmm_posteriors(model: &GmmModel, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.dim() {
        return Err(Error::invalid(format!(
            "descriptor has length {}, GMM expects {}",
            x.len(),
            model.dim()
        )));
    }
    let norms = model.log_norms();
    let mut out = vec![0.0; model.components()];
    let lse = model.joint_log_densities(&norms, x, &mut out);
    out.iter_mut().for_each(|v| *v = (*v - lse).exp());
    Ok(out)
}

pub(crate) fn posteriors_into(model: &GmmModel, log_norms: &[f64], x: &[f64], out: &mut [f64]) {
    let lse = model.joint_log_densities(log_norms, x, out);
    out.iter_mut().for_each(|v| *v = (*v - lse).exp());
}

pub(crate) fn model_log_norms(model: &GmmModel) -> Vec<f64> {
    model.log_norms()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Data log-likelihood after initialization and after every M-step.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Components re-seeded after collapsing to zero weight.
    pub reseeded: usize,
}

pub fn gmm_fit(data: &[Vec<f64>], params: &GmmParams) -> Result<GmmFit> {
    let n = data.len();
    let k = params.components;
    if k == 0 {
        return Err(Error::invalid("GMM needs at least one component"));
    }
    if n < k {
        return Err(Error::invalid(format!("{n} descriptors cannot fit {k} components")));
    }
    let d = data[0].len();
    if d == 0 {
        return Err(Error::invalid("zero-dimensional descriptors"));
    }
    if let Some(i) = data.iter().position(|x| x.len() != d || x.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid(format!("descriptor {i} has wrong length or non-finite values")));
    }

    let (_, global_var) = column_moments(data);
    let mean_var = global_var.iter().sum::<f64>() / d as f64;
    let floor = (params.variance_floor_ratio * mean_var).max(MIN_VARIANCE_FLOOR);
    let init_var: Vec<f64> = global_var.iter().map(|v| v.max(floor)).collect();

    let mut rng = rng::seeded(params.seed);
    let centers = kmeans_pp(data, k, &mut rng);
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: centers,
        variances: vec![init_var.clone(); k],
        variance_floor: floor,
    };

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut reseeded = 0;
    loop {
        let (ll, stats) = e_step(&model, data);
        if let Some(&prev) = trace.last() {
            let gain: f64 = ll - prev;
            if gain <= params.tol * f64::abs(prev) {
                converged = true;
            }
        }
        trace.push(ll);
        if converged || iterations >= params.max_iters {
            break;
        }
        reseeded += m_step(&mut model, &stats, data, &init_var, n);
        iterations += 1;
    }

    Ok(GmmFit {
        model,
        log_likelihood: trace,
        iterations,
        converged,
        reseeded,
    })
}

fn column_moments(data: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = data.len() as f64;
    let d = data[0].len();
    let mut mean = vec![0.0; d];
    for x in data {
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for x in data {
        var.iter_mut()
            .zip(x.iter().zip(&mean))
            .for_each(|(s, (v, m))| *s += (v - m) * (v - m));
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first center uniform, then proportional to squared
/// distance from the nearest chosen center.
fn kmeans_pp(data: &[Vec<f64>], k: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centers = vec![data[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = data.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = data[pick].clone();
        for (d, x) in nearest.iter_mut().zip(data) {
            *d = d.min(sq_dist(x, &c));
        }
        centers.push(c);
    }
    centers
}

/// Responsibility-weighted sums, centered on the current means to keep the
/// variance update free of cancellation.
struct Stats {
    count: Vec<f64>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

fn e_step(model: &GmmModel, data: &[Vec<f64>]) -> (f64, Stats) {
    let k = model.components();
    let d = model.dim();
    let norms = model.log_norms();
    let mut stats = Stats {
        count: vec![0.0; k],
        first: vec![vec![0.0; d]; k],
        second: vec![vec![0.0; d]; k],
    };
    let mut buf = vec![0.0; k];
    let mut ll = 0.0;
    for x in data {
        let lse = model.joint_log_densities(&norms, x, &mut buf);
        ll += lse;
        for c in 0..k {
            let g = (buf[c] - lse).exp();
            if g == 0.0 {
                continue;
            }
            stats.count[c] += g;
            let mu = &model.means[c];
            for j in 0..d {
                let diff = x[j] - mu[j];
                stats.first[c][j] += g * diff;
                stats.second[c][j] += g * diff * diff;
            }
        }
    }
    (ll, stats)
}

/// Returns the number of components re-seeded.
fn m_step(model: &mut GmmModel, stats: &Stats, data: &[Vec<f64>], init_var: &[f64], n: usize) -> usize {
    let k = model.components();
    let floor = model.variance_floor;
    let min_count = 1e-10 * n as f64;
    let mut reseeded = 0;
    for c in 0..k {
        let nk = stats.count[c];
        if nk <= min_count {
            let far = farthest_point(data, &model.means);
            log::warn!("GMM component {c} collapsed; re-seeding at descriptor {far}");
            model.means[c] = data[far].clone();
            model.variances[c] = init_var.to_vec();
            model.weights[c] = 1.0 / n as f64;
            reseeded += 1;
            continue;
        }
        model.weights[c] = nk / n as f64;
        for j in 0..model.means[c].len() {
            let shift = stats.first[c][j] / nk;
            let var = stats.second[c][j] / nk - shift * shift;
            model.means[c][j] += shift;
            model.variances[c][j] = var.max(floor);
        }
    }
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);
    reseeded
}

fn farthest_point(data: &[Vec<f64>], means: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in data.iter().enumerate() {
        let d = means.iter().map(|m| sq_dist(x, m)).fold(f64::INFINITY, f64::min);
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn blobs(centers: &[[f64; 2]], per: usize, sd: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sd).unwrap();
        centers
            .iter()
            .flat_map(|c| {
                (0..per)
                    .map(|_| vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)])
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    #[test]
    fn single_component_is_closed_form() {
        let data = blobs(&[[1.0, -2.0]], 200, 0.7, 1);
        let fit = gmm_fit(&data, &GmmParams { components: 1, ..Default::default() }).unwrap();
        let (mean, var) = column_moments(&data);
        for j in 0..2 {
            assert!((fit.model.means[0][j] - mean[j]).abs() < 1e-10);
            assert!((fit.model.variances[0][j] - var[j]).abs() < 1e-10);
        }
        assert_eq!(fit.model.weights, vec![1.0]);
    }

    #[test]
    fn constant_data_hits_the_floor() {
        let data = vec![vec![3.0, 3.0]; 10];
        let fit = gmm_fit(&data, &GmmParams { components: 1, ..Default::default() }).unwrap();
        assert_eq!(fit.model.variances[0], vec![fit.model.variance_floor; 2]);
        assert_eq!(fit.model.means[0], vec![3.0, 3.0]);
    }

    fn kmeans_oracle(data: &[Vec<f64>], init: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        let mut centers = init;
        for _ in 0..100 {
            let mut sums = vec![vec![0.0; 2]; centers.len()];
            let mut counts = vec![0usize; centers.len()];
            for x in data {
                let c = (0..centers.len())
                    .min_by(|&a, &b| sq_dist(x, &centers[a]).total_cmp(&sq_dist(x, &centers[b])))
                    .unwrap();
                counts[c] += 1;
                sums[c][0] += x[0];
                sums[c][1] += x[1];
            }
            for c in 0..centers.len() {
                centers[c] = vec![sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
            }
        }
        centers
    }

    #[test]
    fn separated_clusters_recover_centroids() {
        let sd = 0.5;
        let data = blobs(&[[0.0, 0.0], [10.0, 10.0]], 150, sd, 2);
        let fit = gmm_fit(&data, &GmmParams { components: 2, seed: 7, ..Default::default() }).unwrap();
        let oracle = kmeans_oracle(&data, vec![data[0].clone(), data[150].clone()]);
        for c in &oracle {
            let nearest = fit
                .model
                .means
                .iter()
                .map(|m| sq_dist(m, c).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 0.1 * sd, "{nearest}");
        }
        assert!((fit.model.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn likelihood_never_decreases() {
        for seed in 0..10 {
            let data = blobs(&[[0.0, 0.0], [2.0, 1.0], [-1.0, 3.0]], 40, 1.0, seed);
            let fit = gmm_fit(&data, &GmmParams { components: 4, seed, ..Default::default() }).unwrap();
            for w in fit.log_likelihood.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn posteriors() {
        let model = GmmModel {
            weights: vec![0.5, 0.5],
            means: vec![vec![-50.0], vec![50.0]],
            variances: vec![vec![1.0], vec![1.0]],
            variance_floor: 1e-4,
        };
        let g = gmm_posteriors(&model, &[-50.0]).unwrap();
        assert!(g[0] >= 1.0 - 1e-6);
        let same = GmmModel {
            weights: vec![0.3, 0.7],
            means: vec![vec![1.0], vec![1.0]],
            variances: vec![vec![2.0], vec![2.0]],
            variance_floor: 1e-4,
        };
        let g = gmm_posteriors(&same, &[5.0]).unwrap();
        assert!((g[0] - 0.3).abs() < 1e-12 && (g[1] - 0.7).abs() < 1e-12);
        let one = GmmModel {
            weights: vec![1.0],
            means: vec![vec![0.0]],
            variances: vec![vec![1.0]],
            variance_floor: 1e-4,
        };
        assert_eq!(gmm_posteriors(&one, &[1e6]).unwrap(), vec![1.0]);
        assert!(gmm_posteriors(&one, &[0.0, 1.0]).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(120))]
        #[test]
        fn likelihood_monotone_random(seed in 0u64..u64::MAX, k in 1usize..5) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<Vec<f64>> = (0..60)
                .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let fit = gmm_fit(&data, &GmmParams { components: k, seed, ..Default::default() }).unwrap();
            for w in fit.log_likelihood.windows(2) {
                proptest::prop_assert!(w[1] >= w[0] - 1e-9);
            }
        }
    }

    #[test]
    fn too_few_descriptors() {
        let data = vec![vec![0.0]; 2];
        assert!(matches!(
            gmm_fit(&data, &GmmParams { components: 3, ..Default::default() }),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn seeded_fit_is_reproducible() {
        let data = blobs(&[[0.0, 0.0], [3.0, 0.0]], 50, 1.0, 5);
        let p = GmmParams { components: 3, seed: 11, ..Default::default() };
        assert_eq!(gmm_fit(&data, &p).unwrap(), gmm_fit(&data, &p).unwrap());
    }
}
