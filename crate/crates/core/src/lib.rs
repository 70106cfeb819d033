//! Calibration of binary classifier scores.
//!
//! The crate turns answer-token logits (for example the `Yes`/`No` logits an
//! LLM emits at the first generated position) into calibrated probabilities.
//! Two calibrators are provided:
//!
//! - an inductive Venn-Abers predictor ([`venn_abers`]) built on weighted
//!   isotonic regression ([`isotonic`]), and
//! - temperature scaling ([`temperature`]) as a parametric baseline.
//!
//! [`metrics`] holds the evaluation harness (ECE, Brier, AUC, macro-F1,
//! reliability bins) and [`synth`] a generator with an exact Bayes posterior
//! that serves as ground truth in tests.

pub mod data;
pub mod error;
pub mod isotonic;
pub mod metrics;
pub mod numfmt;
pub mod rng;
pub mod synth;
pub mod temperature;
pub mod venn_abers;

pub use data::{LogitRecord, ScoreKind, ScoredExample, SplitSpec};
pub use error::{Error, Result};
pub use isotonic::{IsotonicFit, WeightedPoint};
pub use metrics::{MetricsReport, ReliabilityBins, RunTag};
pub use synth::SynthConfig;
pub use temperature::TemperatureModel;
pub use venn_abers::{IvapCalibrator, Multiprobability};
