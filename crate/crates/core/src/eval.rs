//! Average precision, mean average precision and multiclass accuracy.
//!
//! AP is the non-interpolated form `(1/P) Σ_{k=1..P} k / rank(k)` where
//! `rank(k)` is the 1-based rank of the k-th relevant item. Ranking sorts
//! scores descending; equal scores fall back to ascending instance id.

use std::cmp::Ordering;

use crate::{Error, Result};

/// One scored instance in a retrieval run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored<I> {
    pub id: I,
    pub score: f64,
    pub relevant: bool,
}

/// A run sorted into rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedRun<I> {
    items: Vec<Scored<I>>,
}

impl<I: Ord + Clone> RankedRun<I> {
    pub fn new(mut items: Vec<Scored<I>>) -> Result<Self> {
        if items.iter().any(|s| s.score.is_nan()) {
            return Err(Error::invalid("NaN score in ranked run"));
        }
        items.sort_by(|a, b| rank_order(a.score, &a.id, b.score, &b.id));
        if items.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::invalid("duplicate instance id in ranked run"));
        }
        Ok(RankedRun { items })
    }

    pub fn items(&self) -> &[Scored<I>] {
        &self.items
    }

    pub fn average_precision(&self) -> Result<f64> {
        ap_in_rank_order(self.items.iter().map(|s| s.relevant))
    }
}

fn rank_order<I: Ord>(sa: f64, ia: &I, sb: f64, ib: &I) -> Ordering {
    // +0.0 folds -0.0 into 0.0 so they tie
    (sb + 0.0).total_cmp(&(sa + 0.0)).then_with(|| ia.cmp(ib))
}

fn ap_in_rank_order(relevant: impl Iterator<Item = bool>) -> Result<f64> {
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (pos, rel) in relevant.enumerate() {
        if rel {
            tp += 1;
            sum += tp as f64 / (pos + 1) as f64;
        }
    }
    if tp == 0 {
        return Err(Error::invalid("average precision needs at least one relevant instance"));
    }
    Ok(sum / tp as f64)
}

/// AP of `scores` against `relevant`, using positions as instance ids.
pub fn average_precision(scores: &[f64], relevant: &[bool]) -> Result<f64> {
    if scores.len() != relevant.len() {
        return Err(Error::invalid(format!(
            "{} scores but {} relevance flags",
            scores.len(),
            relevant.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| rank_order(scores[a], &a, scores[b], &b));
    ap_in_rank_order(order.into_iter().map(|i| relevant[i]))
}

pub fn mean_ap(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::invalid("mean AP over zero events"));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

pub fn multiclass_accuracy<T: PartialEq>(predicted: &[T], truth: &[T]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions but {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("accuracy over zero instances"));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Fraction formatted as a percentage with two decimals, e.g. `30.00%`.
pub fn percent(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}
