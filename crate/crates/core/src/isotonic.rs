//! Weighted isotonic (non-decreasing least-squares) regression by
//! pool-adjacent-violators.

use serde::{Deserialize, Serialize};

use crate::data::ScoredExample;
use crate::error::{Error, Result};

/// A distinct score with the mean label observed there and its multiplicity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedPoint {
    pub score: f64,
    pub value: f64,
    pub weight: f64,
}

/// Step function produced by [`fit_pava`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicFit {
    knots: Vec<f64>,
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl IsotonicFit {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Value at `z`: that of the greatest knot `<= z`, or the first value
    /// when `z` lies below every knot.
    pub fn evaluate(&self, z: f64) -> f64 {
        let idx = self.knots.partition_point(|&k| k <= z);
        self.values[idx.saturating_sub(1)]
    }
}

/// Collapses examples sharing a score into one weighted point, sorted by
/// score.
pub fn pool_duplicates(examples: &[ScoredExample]) -> Result<Vec<WeightedPoint>> {
    if examples.is_empty() {
        return Err(Error::invalid("cannot pool an empty example set"));
    }
    if let Some(bad) = examples.iter().find(|e| !e.score.is_finite()) {
        return Err(Error::invalid(format!("non-finite score {}", bad.score)));
    }
    let mut sorted: Vec<&ScoredExample> = examples.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));

    let mut out: Vec<WeightedPoint> = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].score;
        let mut count = 0usize;
        let mut positives = 0usize;
        // -0.0 and 0.0 compare equal and pool together.
        while i < sorted.len() && sorted[i].score == score {
            count += 1;
            positives += sorted[i].label as usize;
            i += 1;
        }
        out.push(WeightedPoint {
            score,
            value: positives as f64 / count as f64,
            weight: count as f64,
        });
    }
    Ok(out)
}

/// Least-squares non-decreasing fit of weighted points with strictly
/// ascending scores.
pub fn fit_pava(points: &[WeightedPoint]) -> Result<IsotonicFit> {
    if points.is_empty() {
        return Err(Error::invalid("isotonic fit needs at least one point"));
    }
    for p in points {
        if !p.score.is_finite() {
            return Err(Error::invalid("point scores must be finite"));
        }
        if !(p.weight > 0.0) || !p.weight.is_finite() {
            return Err(Error::invalid(format!(
                "weight must be positive, got {}",
                p.weight
            )));
        }
        if !(0.0..=1.0).contains(&p.value) {
            return Err(Error::invalid(format!("value {} outside [0, 1]", p.value)));
        }
    }
    if let Some(w) = points.windows(2).find(|w| w[0].score >= w[1].score) {
        return Err(Error::invalid(format!(
            "points must have strictly ascending scores ({} then {})",
            w[0].score, w[1].score
        )));
    }
    let values = pava(points.iter().map(|p| (p.value, p.weight)));
    Ok(IsotonicFit {
        knots: points.iter().map(|p| p.score).collect(),
        values,
        weights: points.iter().map(|p| p.weight).collect(),
    })
}

struct Block {
    weight: f64,
    weighted_sum: f64,
    // Cached so an unmerged point reports its value exactly.
    mean: f64,
    len: usize,
}

/// Stack-based PAVA over `(value, weight)` pairs in score order; returns the
/// fitted value of every input pair. Each pair is pushed once and merged at
/// most once, so the pass is linear.
pub(crate) fn pava(pairs: impl IntoIterator<Item = (f64, f64)>) -> Vec<f64> {
    let stack = pava_blocks(pairs);
    let mut out = Vec::with_capacity(stack.iter().map(|b| b.len).sum());
    for b in &stack {
        out.extend(std::iter::repeat_n(b.mean.clamp(0.0, 1.0), b.len));
    }
    out
}

/// Fitted value of the pair at position `idx` only.
pub(crate) fn pava_value_at(pairs: impl IntoIterator<Item = (f64, f64)>, idx: usize) -> f64 {
    let mut end = 0;
    for b in pava_blocks(pairs) {
        end += b.len;
        if idx < end {
            return b.mean.clamp(0.0, 1.0);
        }
    }
    panic!("index {idx} beyond {end} fitted points");
}

fn pava_blocks(pairs: impl IntoIterator<Item = (f64, f64)>) -> Vec<Block> {
    let mut stack: Vec<Block> = Vec::new();
    for (value, weight) in pairs {
        let mut cur = Block {
            weight,
            weighted_sum: weight * value,
            mean: value,
            len: 1,
        };
        while stack.last().is_some_and(|top| top.mean > cur.mean) {
            let top = stack.pop().expect("non-empty");
            let weight = top.weight + cur.weight;
            let weighted_sum = top.weighted_sum + cur.weighted_sum;
            cur = Block {
                weight,
                weighted_sum,
                mean: weighted_sum / weight,
                len: top.len + cur.len,
            };
        }
        stack.push(cur);
    }
    stack
}
