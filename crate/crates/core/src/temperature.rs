//! Temperature scaling: a single divisor `tau` applied to the logits before
//! the softmax, learned by minimizing the mean negative log-likelihood on the
//! calibration set.

use serde::{Deserialize, Serialize};

use crate::data::{record_score, transform_scores, LogitRecord, ScoreKind, ScoredExample};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-12;

pub const DEFAULT_BOUNDS: (f64, f64) = (0.01, 1000.0);
pub const DEFAULT_GRID_POINTS: usize = 200;
pub const DEFAULT_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub bounds: (f64, f64),
    pub grid_points: usize,
    /// Golden-section search stops once the bracket's relative width is
    /// below this.
    pub rel_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            bounds: DEFAULT_BOUNDS,
            grid_points: DEFAULT_GRID_POINTS,
            rel_tol: DEFAULT_REL_TOL,
        }
    }
}

impl FitOptions {
    pub fn with_bounds(tau_min: f64, tau_max: f64) -> Self {
        Self {
            bounds: (tau_min, tau_max),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureModel {
    pub tau_hat: f64,
    pub kind: ScoreKind,
    pub final_nll: f64,
    /// `(tau, mean NLL)` at every grid point searched. Not persisted.
    #[serde(skip)]
    pub grid: Vec<(f64, f64)>,
}

/// Temperature-scaled positive-class probability of one record.
pub fn scaled_prob(record: &LogitRecord, kind: ScoreKind, tau: f64) -> Result<f64> {
    record_score(record, kind, tau)
}

/// Mean binary negative log-likelihood at temperature `tau`.
pub fn mean_nll(records: &[LogitRecord], kind: ScoreKind, tau: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("NLL of an empty set is undefined"));
    }
    let total: f64 = transform_scores(records, kind, tau)?
        .iter()
        .map(|e| {
            let p = e.score.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if e.label == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / records.len() as f64)
}

/// Learns `tau_hat` on `calibration` with a log-spaced grid followed by a
/// golden-section refinement around the best grid point. Ties go to the
/// smaller temperature.
pub fn fit_temperature(
    calibration: &[LogitRecord],
    kind: ScoreKind,
    options: FitOptions,
) -> Result<TemperatureModel> {
    if calibration.is_empty() {
        return Err(Error::invalid(
            "temperature fit needs a non-empty calibration set",
        ));
    }
    let (lo, hi) = options.bounds;
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(Error::invalid(format!(
            "temperature bounds must satisfy 0 < min < max, got ({lo}, {hi})"
        )));
    }
    if options.grid_points < 2 {
        return Err(Error::invalid("temperature grid needs at least 2 points"));
    }
    if !(options.rel_tol > 0.0) {
        return Err(Error::invalid("relative tolerance must be positive"));
    }

    let loss = |log_tau: f64| mean_nll(calibration, kind, log_tau.exp());
    let taus = log_grid(lo, hi, options.grid_points);
    let mut grid = Vec::with_capacity(taus.len());
    for &tau in &taus {
        grid.push((tau, mean_nll(calibration, kind, tau)?));
    }
    let best = grid.iter().enumerate().fold(
        0,
        |best, (i, &(_, l))| if l < grid[best].1 { i } else { best },
    );

    let a = taus[best.saturating_sub(1)].ln();
    let b = taus[(best + 1).min(taus.len() - 1)].ln();
    let refined = golden_section(a, b, options.rel_tol, &loss)?;
    let refined = (refined.exp(), loss(refined)?);

    let (tau_hat, final_nll) = {
        let grid_best = grid[best];
        if refined.1 < grid_best.1 || (refined.1 == grid_best.1 && refined.0 < grid_best.0) {
            refined
        } else {
            grid_best
        }
    };
    Ok(TemperatureModel {
        tau_hat,
        kind,
        final_nll,
        grid,
    })
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| match i {
            0 => lo,
            i if i == n - 1 => hi,
            i => (a + (b - a) * i as f64 / (n - 1) as f64).exp(),
        })
        .collect()
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section minimization of `f` on `[a, b]` (log-temperature
/// coordinates, so an absolute width is a relative width in `tau`).
fn golden_section(
    mut a: f64,
    mut b: f64,
    tol: f64,
    f: &impl Fn(f64) -> Result<f64>,
) -> Result<f64> {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > tol {
        // `<=` keeps the lower sub-bracket on ties.
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

impl TemperatureModel {
    /// Scores `records` at the learned temperature.
    pub fn apply(&self, records: &[LogitRecord]) -> Result<Vec<ScoredExample>> {
        transform_scores(records, self.kind, self.tau_hat)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if !(model.tau_hat > 0.0) || !model.tau_hat.is_finite() {
            return Err(Error::invalid(format!("invalid tau_hat {}", model.tau_hat)));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn rec(i: usize, d: f64, label: u8) -> LogitRecord {
        LogitRecord::new(format!("r{i}"), d, 0.0, label)
    }

    #[test]
    fn scaled_prob_values() {
        let r = rec(0, 2.0, 1);
        assert_eq!(
            scaled_prob(&r, ScoreKind::Softmax2, 2.0).unwrap(),
            0.7310585786300049
        );
        let tie = LogitRecord::new("t", -1.25, -1.25, 0);
        assert_eq!(scaled_prob(&tie, ScoreKind::Softmax2, 3.3).unwrap(), 0.5);
        let mut last = 1.0;
        for tau in log_grid(0.5, 1e6, 40) {
            let p = scaled_prob(&r, ScoreKind::Softmax2, tau).unwrap();
            assert!(p <= last && p > 0.5);
            last = p;
        }
        assert!(last - 0.5 < 1e-5);
    }

    #[test]
    fn single_confident_example_pins_lower_bound() {
        let model = fit_temperature(
            &[rec(0, 1.5, 1)],
            ScoreKind::Softmax2,
            FitOptions::default(),
        )
        .unwrap();
        assert_eq!(model.tau_hat, DEFAULT_BOUNDS.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let r = [rec(0, 1.0, 1)];
        assert!(fit_temperature(&[], ScoreKind::Softmax2, FitOptions::default()).is_err());
        assert!(
            fit_temperature(&r, ScoreKind::Softmax2, FitOptions::with_bounds(2.0, 1.0)).is_err()
        );
        assert!(
            fit_temperature(&r, ScoreKind::Softmax2, FitOptions::with_bounds(0.0, 1.0)).is_err()
        );
        assert!(fit_temperature(&r, ScoreKind::SoftmaxK, FitOptions::default()).is_err());
    }

    #[test]
    fn final_loss_beats_every_grid_point() {
        let mut rng = SeededRng::new(5);
        let recs: Vec<_> = (0..300)
            .map(|i| {
                let y = (rng.uniform() < 0.5) as u8;
                let d = if y == 1 { 2.0 } else { -2.0 } + 3.0 * rng.standard_normal();
                rec(i, d, y)
            })
            .collect();
        let model = fit_temperature(&recs, ScoreKind::Softmax2, FitOptions::default()).unwrap();
        assert_eq!(model.grid.len(), DEFAULT_GRID_POINTS);
        assert!(model.grid.iter().all(|&(_, l)| model.final_nll <= l));
        assert!(model.final_nll.is_finite());
    }

    #[test]
    fn apply_matches_transform_and_round_trips() {
        let recs: Vec<_> = (0..5)
            .map(|i| rec(i, i as f64 - 2.0, (i % 2) as u8))
            .collect();
        let model = TemperatureModel {
            tau_hat: 1.0,
            kind: ScoreKind::Softmax2,
            final_nll: 0.0,
            grid: vec![],
        };
        assert_eq!(
            model.apply(&recs).unwrap(),
            transform_scores(&recs, ScoreKind::Softmax2, 1.0).unwrap()
        );
        assert!(model.apply(&[]).unwrap().is_empty());
        let back = TemperatureModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        let v: serde_json::Value = serde_json::from_str(&model.to_json().unwrap()).unwrap();
        assert_eq!(v["kind"], "softmax2");
    }

    #[test]
    fn nll_is_finite_under_saturation() {
        let recs = [rec(0, 800.0, 0), rec(1, -800.0, 1)];
        let nll = mean_nll(&recs, ScoreKind::Softmax2, 0.01).unwrap();
        assert!(nll.is_finite());
        assert!((nll - (-(PROB_EPS).ln())).abs() < 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn refined_tau_matches_dense_grid(seed in any::<u64>(), scale in 0.3f64..4.0) {
            let mut rng = SeededRng::new(seed);
            let recs: Vec<_> = (0..200)
                .map(|i| {
                    let y = (rng.uniform() < 0.5) as u8;
                    let d = if y == 1 { 1.0 } else { -1.0 } + scale * rng.standard_normal();
                    rec(i, d * 3.0, y)
                })
                .collect();
            let model = fit_temperature(&recs, ScoreKind::Softmax2, FitOptions::default()).unwrap();
            let dense = log_grid(DEFAULT_BOUNDS.0, DEFAULT_BOUNDS.1, 20_000);
            let (dense_tau, _) = dense
                .iter()
                .map(|&t| (t, mean_nll(&recs, ScoreKind::Softmax2, t).unwrap()))
                .fold((0.0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
            prop_assert!(((model.tau_hat - dense_tau) / dense_tau).abs() <= 1e-3,
                "refined {} dense {}", model.tau_hat, dense_tau);
        }

        #[test]
        fn scaling_preserves_ranking(ds in prop::collection::vec(-5f64..5.0, 2..40), tau in 0.2f64..50.0) {
            let recs: Vec<_> = ds.iter().enumerate().map(|(i, &d)| rec(i, d, 0)).collect();
            let model = TemperatureModel { tau_hat: tau, kind: ScoreKind::Softmax2, final_nll: 0.0, grid: vec![] };
            let scored = model.apply(&recs).unwrap();
            let order = |key: &dyn Fn(usize) -> f64| {
                let mut idx: Vec<usize> = (0..ds.len()).collect();
                idx.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
                idx
            };
            prop_assert_eq!(order(&|i| scored[i].score), order(&|i| ds[i]));
        }
    }
}
