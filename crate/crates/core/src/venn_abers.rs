//! Inductive Venn-Abers prediction on a fixed calibration set.
//!
//! For a test score `z` the predictor fits two isotonic regressions on the
//! calibration set augmented with `(z, 0)` and with `(z, 1)`, and reports the
//! two fitted values at `z` as a multiprobability `(p0, p1)`.
//! [`predict_naive`] does exactly that per query.
//!
//! [`IvapCalibrator`] exploits that `z -> (p0, p1)` only depends on where `z`
//! falls relative to the `d` distinct calibration scores: on each of the
//! `2d + 1` cells (gap below `s_1`, `s_1` itself, the gap `(s_1, s_2)`, ...,
//! the gap above `s_d`) the pair is constant. The table is filled once by
//! evaluating one representative per cell, after which a query is a binary
//! search.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::ScoredExample;
use crate::error::{Error, Result};
use crate::isotonic::{self, fit_pava, pool_duplicates, WeightedPoint};

/// Smallest calibration set accepted.
pub const MIN_CALIBRATION: usize = 2;

/// Lower and upper probability of the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multiprobability {
    pub p0: f64,
    pub p1: f64,
}

impl Multiprobability {
    pub fn new(p0: f64, p1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p0) || !(0.0..=1.0).contains(&p1) || p0 > p1 {
            return Err(Error::invalid(format!(
                "multiprobability needs 0 <= p0 <= p1 <= 1, got ({p0}, {p1})"
            )));
        }
        Ok(Self { p0, p1 })
    }

    /// Builds the pair from two fitted values, absorbing float noise that
    /// would put `p0` above `p1`.
    fn from_fits(p0: f64, p1: f64) -> Self {
        if p0 >= p1 {
            log::debug!("non-strict multiprobability ({p0}, {p1})");
        }
        Self { p0: p0.min(p1), p1 }
    }

    /// Width of the interval, a per-example uncertainty signal.
    pub fn width(&self) -> f64 {
        self.p1 - self.p0
    }

    /// The log-loss-regret minimizing point probability `p1 / (1 - p0 + p1)`.
    pub fn merged(&self) -> f64 {
        merge(*self)
    }
}

/// `p1 / (1 - p0 + p1)`, kept inside `[p0, p1]`.
pub fn merge(mp: Multiprobability) -> f64 {
    let p = mp.p1 / (1.0 - mp.p0 + mp.p1);
    // The bound holds algebraically; rounding in the denominator can push p
    // one ulp outside it.
    p.clamp(mp.p0, mp.p1)
}

fn check_calibration(calibration: &[ScoredExample]) -> Result<()> {
    if calibration.len() < MIN_CALIBRATION {
        return Err(Error::invalid(format!(
            "calibration set needs at least {MIN_CALIBRATION} examples, got {}",
            calibration.len()
        )));
    }
    if calibration.iter().any(|e| !e.score.is_finite()) {
        return Err(Error::invalid("calibration scores must be finite"));
    }
    if calibration.iter().any(|e| e.label > 1) {
        return Err(Error::invalid("calibration labels must be 0 or 1"));
    }
    Ok(())
}

fn check_query(z: f64) -> Result<()> {
    if !z.is_finite() {
        return Err(Error::invalid(format!(
            "query score must be finite, got {z}"
        )));
    }
    Ok(())
}

/// Per-query Venn-Abers prediction: two full isotonic fits on the augmented
/// calibration set. `O(m log m)` per call.
pub fn predict_naive(calibration: &[ScoredExample], z: f64) -> Result<Multiprobability> {
    check_calibration(calibration)?;
    check_query(z)?;
    let mut augmented = Vec::with_capacity(calibration.len() + 1);
    augmented.extend_from_slice(calibration);
    augmented.push(ScoredExample { score: z, label: 0 });
    let mut fitted = [0.0; 2];
    for label in [0u8, 1] {
        augmented.last_mut().expect("query appended").label = label;
        let fit = fit_pava(&pool_duplicates(&augmented)?)?;
        fitted[label as usize] = fit.evaluate(z);
    }
    Ok(Multiprobability::from_fits(fitted[0], fitted[1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    /// Open interval between consecutive calibration scores (or unbounded).
    Gap,
    /// Exactly a calibration score.
    Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub kind: CellKind,
    pub p0: f64,
    pub p1: f64,
}

impl Cell {
    pub fn multiprobability(&self) -> Multiprobability {
        Multiprobability {
            p0: self.p0,
            p1: self.p1,
        }
    }
}

/// Precomputed inductive Venn-Abers predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IvapDocument", into = "IvapDocument")]
pub struct IvapCalibrator {
    scores: Vec<f64>,
    cells: Vec<Cell>,
    m: usize,
    label_counts: Option<[usize; 2]>,
}

/// Persisted form of [`IvapCalibrator`].
#[derive(Serialize, Deserialize)]
struct IvapDocument {
    scores: Vec<f64>,
    cells: Vec<Cell>,
    m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_counts: Option<[usize; 2]>,
}

impl From<IvapCalibrator> for IvapDocument {
    fn from(c: IvapCalibrator) -> Self {
        Self {
            scores: c.scores,
            cells: c.cells,
            m: c.m,
            label_counts: c.label_counts,
        }
    }
}

impl TryFrom<IvapDocument> for IvapCalibrator {
    type Error = Error;

    fn try_from(doc: IvapDocument) -> Result<Self> {
        let d = doc.scores.len();
        if d == 0 {
            return Err(Error::invalid("calibrator has no scores"));
        }
        if doc.cells.len() != 2 * d + 1 {
            return Err(Error::invalid(format!(
                "calibrator with {d} scores needs {} cells, found {}",
                2 * d + 1,
                doc.cells.len()
            )));
        }
        if doc.scores.iter().any(|s| !s.is_finite()) || doc.scores.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::invalid(
                "calibrator scores must be finite and strictly ascending",
            ));
        }
        for (i, cell) in doc.cells.iter().enumerate() {
            let expected = if i % 2 == 0 {
                CellKind::Gap
            } else {
                CellKind::Point
            };
            if cell.kind != expected {
                return Err(Error::invalid(format!(
                    "cell {i} should be a {expected} cell"
                )));
            }
            Multiprobability::new(cell.p0, cell.p1)?;
        }
        if doc
            .cells
            .windows(2)
            .any(|w| w[0].p0 > w[1].p0 || w[0].p1 > w[1].p1)
        {
            return Err(Error::invalid("cell probabilities must be non-decreasing"));
        }
        if doc.m < MIN_CALIBRATION || doc.m < d {
            return Err(Error::invalid(format!(
                "implausible calibration size {}",
                doc.m
            )));
        }
        if let Some([n0, n1]) = doc.label_counts {
            if n0 + n1 != doc.m {
                return Err(Error::invalid("label counts do not add up to m"));
            }
        }
        Ok(Self {
            scores: doc.scores,
            cells: doc.cells,
            m: doc.m,
            label_counts: doc.label_counts,
        })
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Gap => "gap",
            CellKind::Point => "point",
        })
    }
}

/// Where a query lands among the pooled calibration points.
enum Slot {
    /// New point inserted before pooled index `k`.
    Insert(usize),
    /// Pooled with the existing point at index `k`.
    Merge(usize),
}

/// Fitted value at the query after augmenting pooled calibration points.
fn augmented_value(points: &[WeightedPoint], positives: &[usize], slot: Slot, label: u8) -> f64 {
    match slot {
        Slot::Insert(k) => {
            let pairs = points[..k]
                .iter()
                .map(|p| (p.value, p.weight))
                .chain(std::iter::once((label as f64, 1.0)))
                .chain(points[k..].iter().map(|p| (p.value, p.weight)));
            isotonic::pava_value_at(pairs, k)
        }
        Slot::Merge(k) => {
            let count = points[k].weight as usize + 1;
            let pooled = (positives[k] + label as usize) as f64 / count as f64;
            let pairs = points.iter().enumerate().map(|(i, p)| {
                if i == k {
                    (pooled, count as f64)
                } else {
                    (p.value, p.weight)
                }
            });
            isotonic::pava_value_at(pairs, k)
        }
    }
}

impl IvapCalibrator {
    /// Precomputes the `2d + 1` cell table. Every cell costs one linear PAVA
    /// pass per label, so the fit is `O(m log m + d^2)`.
    pub fn fit(calibration: &[ScoredExample]) -> Result<Self> {
        check_calibration(calibration)?;
        let n1 = calibration.iter().filter(|e| e.label == 1).count();
        let n0 = calibration.len() - n1;
        if n0 == 0 || n1 == 0 {
            log::warn!(
                "calibration set has a single label ({n0} negatives, {n1} positives); \
                 predictions will be one-sided"
            );
        }
        let points = pool_duplicates(calibration)?;
        let positives: Vec<usize> = points
            .iter()
            .map(|p| (p.value * p.weight).round() as usize)
            .collect();
        let d = points.len();
        let mut cells = Vec::with_capacity(2 * d + 1);
        for k in 0..=d {
            cells.push(Self::cell(&points, &positives, CellKind::Gap, k));
            if k < d {
                cells.push(Self::cell(&points, &positives, CellKind::Point, k));
            }
        }
        Ok(Self {
            scores: points.iter().map(|p| p.score).collect(),
            cells,
            m: calibration.len(),
            label_counts: Some([n0, n1]),
        })
    }

    fn cell(points: &[WeightedPoint], positives: &[usize], kind: CellKind, k: usize) -> Cell {
        let slot = || match kind {
            CellKind::Gap => Slot::Insert(k),
            CellKind::Point => Slot::Merge(k),
        };
        let mp = Multiprobability::from_fits(
            augmented_value(points, positives, slot(), 0),
            augmented_value(points, positives, slot(), 1),
        );
        Cell {
            kind,
            p0: mp.p0,
            p1: mp.p1,
        }
    }

    /// Distinct calibration scores in ascending order.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Calibration set size.
    pub fn m(&self) -> usize {
        self.m
    }

    /// `[negatives, positives]` in the calibration set, when known.
    pub fn label_counts(&self) -> Option<[usize; 2]> {
        self.label_counts
    }

    /// Index of the cell containing `z`.
    pub fn cell_index(&self, z: f64) -> usize {
        let i = self.scores.partition_point(|&s| s < z);
        if i < self.scores.len() && self.scores[i] == z {
            2 * i + 1
        } else {
            2 * i
        }
    }

    /// A score lying in cell `idx`: the score itself for point cells, the
    /// midpoint for bounded gaps and one unit beyond the extreme scores for
    /// the unbounded gaps.
    pub fn representative(&self, idx: usize) -> f64 {
        let d = self.scores.len();
        let k = idx / 2;
        if idx % 2 == 1 {
            self.scores[k]
        } else if k == 0 {
            self.scores[0] - 1.0
        } else if k == d {
            self.scores[d - 1] + 1.0
        } else {
            let (a, b) = (self.scores[k - 1], self.scores[k]);
            a + (b - a) / 2.0
        }
    }

    pub fn predict(&self, z: f64) -> Result<Multiprobability> {
        check_query(z)?;
        Ok(self.cells[self.cell_index(z)].multiprobability())
    }

    /// Elementwise [`predict`](Self::predict) plus [`merge`], in input order.
    pub fn predict_batch(&self, scores: &[f64]) -> Result<Vec<(Multiprobability, f64)>> {
        scores
            .iter()
            .map(|&z| {
                let mp = self.predict(z)?;
                Ok((mp, merge(mp)))
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
