//! Synthetic logits with a known Bayes posterior.
//!
//! Labels are Bernoulli(`prior`); the positive logit is
//! `d ~ Normal(±mu, sigma)` and the negative logit is fixed at 0. The exact
//! posterior is `logistic(ln(prior / (1 - prior)) + 2 mu d / sigma^2)`, so
//! with `prior = 0.5` the softmax-2 score at temperature
//! `tau* = sigma^2 / (2 mu)` is perfectly calibrated.
//!
//! Randomness comes from [`SeededRng`]: ChaCha20 seeded with `seed`, one
//! uniform for the label, then two uniforms through Box-Muller for `d`.

use serde::{Deserialize, Serialize};

use crate::data::LogitRecord;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub prior: f64,
    pub mu: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            prior: 0.5,
            mu: 1.0,
            sigma: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Configuration whose softmax-2 scores are calibrated at `tau_star`
    /// (`prior` 0.5, `mu` 1, `sigma = sqrt(2 tau_star)`).
    pub fn with_planted_temperature(n: usize, tau_star: f64, seed: u64) -> Self {
        Self {
            n,
            prior: 0.5,
            mu: 1.0,
            sigma: (2.0 * tau_star).sqrt(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        if !(self.prior > 0.0 && self.prior < 1.0) {
            return Err(Error::invalid(format!(
                "prior must lie in (0, 1), got {}",
                self.prior
            )));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Temperature at which softmax-2 equals the posterior (for prior 0.5).
    pub fn planted_temperature(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.mu)
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Exact `P(y = 1 | d)` under the generative model.
pub fn posterior(config: &SynthConfig, d: f64) -> f64 {
    let log_odds = (config.prior / (1.0 - config.prior)).ln()
        + 2.0 * config.mu * d / (config.sigma * config.sigma);
    logistic(log_odds)
}

pub fn generate(config: &SynthConfig) -> Result<Vec<LogitRecord>> {
    config.validate()?;
    let mut rng = SeededRng::new(config.seed);
    let width = config.n.to_string().len();
    Ok((0..config.n)
        .map(|i| {
            let label = (rng.uniform() < config.prior) as u8;
            let mean = if label == 1 { config.mu } else { -config.mu };
            let d = mean + config.sigma * rng.standard_normal();
            let mut record = LogitRecord::new(format!("s{i:0width$}"), d, 0.0, label);
            record.true_posterior = Some(posterior(config, d));
            record
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{record_score, ScoreKind};

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig {
            n: 200,
            seed: 9,
            ..SynthConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SynthConfig { seed: 10, ..cfg };
        assert_ne!(generate(&cfg).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn posterior_fixtures() {
        let cfg = SynthConfig::default();
        assert_eq!(posterior(&cfg, 0.0), 0.5);
        assert_eq!(posterior(&cfg, 1.0), 0.8807970779778823);
        assert_eq!(cfg.planted_temperature(), 0.5);
        let planted = SynthConfig::with_planted_temperature(1, 5.0, 0);
        assert!((planted.planted_temperature() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_is_softmax2_at_planted_temperature() {
        let cfg = SynthConfig {
            n: 500,
            sigma: 2.0,
            mu: 0.7,
            seed: 1,
            ..SynthConfig::default()
        };
        let tau = cfg.planted_temperature();
        for r in generate(&cfg).unwrap() {
            let s = record_score(&r, ScoreKind::Softmax2, tau).unwrap();
            assert!((s - r.true_posterior.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn label_frequency_concentrates() {
        let cfg = SynthConfig {
            n: 10_000,
            seed: 21,
            ..SynthConfig::default()
        };
        let recs = generate(&cfg).unwrap();
        let frac = recs.iter().filter(|r| r.label == 1).count() as f64 / cfg.n as f64;
        let se = (0.25 / cfg.n as f64).sqrt();
        assert!((frac - 0.5).abs() <= 3.0 * se, "positive fraction {frac}");
        assert!(recs.iter().all(|r| {
            let p = r.true_posterior.unwrap();
            p > 0.0 && p < 1.0
        }));
        assert!(recs.iter().all(|r| r.validate().is_ok()));
    }

    #[test]
    fn rejects_invalid_configs() {
        let base = SynthConfig::default();
        for bad in [
            SynthConfig { n: 0, ..base },
            SynthConfig { prior: 1.5, ..base },
            SynthConfig { prior: 0.0, ..base },
            SynthConfig { mu: 0.0, ..base },
            SynthConfig {
                sigma: -1.0,
                ..base
            },
        ] {
            assert!(generate(&bad).is_err());
        }
    }
}
