//! Late fusion of per-modality posteriors by a weighted average, with
//! weights chosen per event on a simplex grid.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eval::average_precision;
use crate::{rng, Error, Result};

pub const DEFAULT_GRID_STEP: f64 = 0.05;
pub const DEFAULT_FOLDS: usize = 5;

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub modalities: Vec<String>,
    pub weights: BTreeMap<String, Vec<f64>>,
}

impl FusionModel {
    pub fn new(modalities: Vec<String>) -> Result<Self> {
        if modalities.is_empty() {
            return Err(Error::invalid("fusion needs at least one modality"));
        }
        let mut sorted = modalities.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != modalities.len() {
            return Err(Error::invalid("duplicate modality name"));
        }
        Ok(FusionModel {
            modalities,
            weights: BTreeMap::new(),
        })
    }

    pub fn set_weights(&mut self, event: &str, weights: Vec<f64>) -> Result<()> {
        check_simplex(&weights, self.modalities.len())?;
        self.weights.insert(event.to_string(), weights);
        Ok(())
    }

    pub fn weights_for(&self, event: &str) -> Result<&[f64]> {
        self.weights
            .get(event)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("no fusion weights for event '{event}'")))
    }
}

fn check_simplex(weights: &[f64], modalities: usize) -> Result<()> {
    if weights.len() != modalities {
        return Err(Error::invalid(format!(
            "{} weights for {modalities} modalities",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid("fusion weights must be finite and non-negative"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid(format!("fusion weights sum to {sum}, not 1")));
    }
    Ok(())
}

/// Element-wise `Σ_m w_m · s_m`.
pub fn fuse_scores(weights: &[f64], scores: &[&[f64]]) -> Result<Vec<f64>> {
    check_simplex(weights, scores.len())?;
    let n = scores[0].len();
    if let Some(m) = scores.iter().position(|s| s.len() != n) {
        return Err(Error::invalid(format!(
            "modality {m} has {} scores, modality 0 has {n}",
            scores[m].len()
        )));
    }
    Ok((0..n)
        .map(|i| weights.iter().zip(scores).map(|(w, s)| w * s[i]).sum())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    /// Fold index of each instance, in input order.
    pub folds: Vec<usize>,
}

impl FoldAssignment {
    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] == fold).collect()
    }

    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] != fold).collect()
    }
}

/// Stratified k-fold split: each class is shuffled with the seed and dealt
/// round-robin, negatives continuing where positives stopped.
pub fn cross_val_split(labels: &[bool], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.len() < k || neg.len() < k {
        return Err(Error::invalid(format!(
            "{k} folds need at least {k} instances per class, got {} positive and {} negative",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = rng::seeded(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut folds = vec![0; labels.len()];
    for (slot, &i) in pos.iter().chain(&neg).enumerate() {
        folds[i] = slot % k;
    }
    Ok(FoldAssignment { k, folds })
}

/// Number of grid intervals for `step`, which must divide 1.
fn grid_intervals(step: f64) -> Result<usize> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::invalid(format!("grid step must lie in (0, 1], got {step}")));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("grid step {step} does not divide 1")));
    }
    Ok(n as usize)
}

/// Integer compositions of `n` into `m` parts, lexicographically ascending.
fn compositions(n: usize, m: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for v in 0..=left {
            prefix.push(v);
            rec(left - v, parts - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, m, &mut Vec::with_capacity(m), &mut out);
    out
}

/// All weight vectors on the simplex grid with spacing `step`.
pub fn simplex_grid(modalities: usize, step: f64) -> Result<Vec<Vec<f64>>> {
    if modalities == 0 {
        return Err(Error::invalid("simplex grid needs at least one modality"));
    }
    let n = grid_intervals(step)?;
    Ok(compositions(n, modalities)
        .into_iter()
        .map(|c| c.into_iter().map(|p| p as f64 / n as f64).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightChoice {
    pub weights: Vec<f64>,
    pub ap: f64,
}

/// Grid search for the weights maximizing AP of the fused scores. Ties go to
/// the point nearest uniform, then to the lexicographically smallest.
pub fn optimize_weights(scores: &[Vec<f64>], labels: &[bool], grid_step: f64) -> Result<WeightChoice> {
    let m = scores.len();
    if m < 2 {
        return Err(Error::invalid(format!("weight search needs at least 2 modalities, got {m}")));
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::invalid("weight search needs both positive and negative labels"));
    }
    if let Some(i) = scores.iter().position(|s| s.len() != labels.len()) {
        return Err(Error::invalid(format!(
            "modality {i} has {} scores for {} labels",
            scores[i].len(),
            labels.len()
        )));
    }
    let n = grid_intervals(grid_step)?;
    let refs: Vec<&[f64]> = scores.iter().map(Vec::as_slice).collect();
    let candidates = compositions(n, m);
    let evaluated = candidates
        .par_iter()
        .map(|parts| {
            let w: Vec<f64> = parts.iter().map(|&p| p as f64 / n as f64).collect();
            let fused = fuse_scores(&w, &refs)?;
            average_precision(&fused, labels)
        })
        .collect::<Result<Vec<f64>>>()?;

    // m·Σp² orders points by distance to uniform without rounding.
    let spread = |parts: &[usize]| parts.iter().map(|&p| p * p).sum::<usize>();
    let mut best = 0;
    for i in 1..candidates.len() {
        let (a, b) = (evaluated[i], evaluated[best]);
        let better = a > b || (a == b && spread(&candidates[i]) < spread(&candidates[best]));
        if better {
            best = i;
        }
    }
    Ok(WeightChoice {
        weights: candidates[best].iter().map(|&p| p as f64 / n as f64).collect(),
        ap: evaluated[best],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fuse_examples() {
        let a = [0.1, 0.9, 0.4];
        let b = [0.3, 0.2, 0.7];
        assert_eq!(fuse_scores(&[1.0, 0.0], &[&a, &b]).unwrap(), a.to_vec());
        assert_eq!(fuse_scores(&[0.5, 0.5], &[&[0.2], &[0.8]]).unwrap(), vec![0.5]);
        let w = [0.3, 0.7];
        assert_eq!(
            fuse_scores(&w, &[&a, &b]).unwrap(),
            fuse_scores(&[0.7, 0.3], &[&b, &a]).unwrap()
        );
        assert!(fuse_scores(&[0.5, 0.6], &[&a, &b]).is_err());
        assert!(fuse_scores(&[1.0], &[&a, &b]).is_err());
        assert!(fuse_scores(&[0.5, 0.5], &[&a, &b[..2]]).is_err());
    }

    #[test]
    fn stratified_folds() {
        let labels: Vec<bool> = (0..20).map(|i| i < 10).collect();
        let f = cross_val_split(&labels, 5, 3).unwrap();
        for fold in 0..5 {
            let m = f.members(fold);
            assert_eq!(m.iter().filter(|&&i| labels[i]).count(), 2);
            assert_eq!(m.len(), 4);
        }
        assert_eq!(f, cross_val_split(&labels, 5, 3).unwrap());
        assert_ne!(f, cross_val_split(&labels, 5, 4).unwrap());
    }

    #[test]
    fn split_errors() {
        let labels = [true, true, false, false, false];
        assert!(cross_val_split(&labels, 3, 0).is_err());
        assert!(cross_val_split(&labels, 1, 0).is_err());
    }

    #[test]
    fn coarse_grid() {
        let g = simplex_grid(2, 0.5).unwrap();
        assert_eq!(g, vec![vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 0.0]]);
        assert_eq!(simplex_grid(3, 0.05).unwrap().len(), 231);
        assert!(simplex_grid(2, 0.3).is_err());
        assert!(simplex_grid(2, 0.0).is_err());
    }

    #[test]
    fn identical_modalities_pick_uniform() {
        let s = vec![0.2, 0.9, 0.4, 0.7, 0.1];
        let labels = [false, true, false, true, false];
        let c = optimize_weights(&[s.clone(), s], &labels, 0.05).unwrap();
        assert_eq!(c.weights, vec![0.5, 0.5]);
        assert_eq!(c.ap, 1.0);
    }

    #[test]
    fn informative_modality_against_constant() {
        let labels = [true, false, true, false, false, true];
        let a: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
        let b = vec![0.5; 6];
        let c = optimize_weights(&[a, b], &labels, 0.05).unwrap();
        // Every point with weight on A ranks perfectly; the tie-break then
        // settles on the uniform point.
        assert_eq!(c.ap, 1.0);
        assert_eq!(c.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn stronger_modality_dominates() {
        let labels = [true, true, false, false, false, false];
        let a = vec![0.9, 0.8, 0.1, 0.2, 0.3, 0.4];
        let b = vec![0.0, 0.0, 0.9, 0.9, 0.9, 0.9];
        let c = optimize_weights(&[a, b], &labels, 0.1).unwrap();
        assert_eq!(c.ap, 1.0);
        assert!(c.weights[0] > c.weights[1]);
    }

    #[test]
    fn search_errors() {
        let s = vec![0.1, 0.2];
        assert!(optimize_weights(&[s.clone()], &[true, false], 0.5).is_err());
        assert!(optimize_weights(&[s.clone(), s.clone()], &[true, true], 0.5).is_err());
        assert!(optimize_weights(&[s.clone(), s], &[true, false], 0.3).is_err());
    }

    proptest! {
        #[test]
        fn fused_ap_dominates_corners(
            data in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, any::<bool>()), 4..40)
        ) {
            let labels: Vec<bool> = data.iter().map(|d| d.2).collect();
            prop_assume!(labels.iter().any(|&l| l) && !labels.iter().all(|&l| l));
            let a: Vec<f64> = data.iter().map(|d| d.0).collect();
            let b: Vec<f64> = data.iter().map(|d| d.1).collect();
            let c = optimize_weights(&[a.clone(), b.clone()], &labels, 0.1).unwrap();
            prop_assert!(c.ap >= average_precision(&a, &labels).unwrap());
            prop_assert!(c.ap >= average_precision(&b, &labels).unwrap());
            prop_assert!((c.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn fusion_is_monotone(
            a in prop::collection::vec(0.0f64..1.0, 1..10),
            w in 0.0f64..1.0,
            bump in 0.0f64..1.0,
            at in 0usize..10,
        ) {
            let b: Vec<f64> = a.iter().map(|x| 1.0 - x).collect();
            let before = fuse_scores(&[w, 1.0 - w], &[&a, &b]).unwrap();
            let mut a2 = a.clone();
            let i = at % a.len();
            a2[i] += bump;
            let after = fuse_scores(&[w, 1.0 - w], &[&a2, &b]).unwrap();
            prop_assert!(after[i] >= before[i]);
        }
    }
}
