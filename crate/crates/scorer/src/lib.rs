//! Harvests answer-token log-probabilities from a completion endpoint and
//! turns them into [`LogitRecord`](venncal_core::LogitRecord) files.
//!
//! Endpoints report log-probabilities, i.e. logits minus the per-prompt log
//! normalizer. The shift cancels in `u_pos - u_neg`, so softmax-2 scores are
//! the same as those from raw logits at every temperature.

pub mod client;
pub mod dataset;
pub mod error;
pub mod journal;
pub mod prompt;

pub use client::{AnswerToken, MissingTokenPolicy, Scorer, ScorerConfig};
pub use dataset::{DatasetExample, DatasetKind};
pub use error::{Error, Result};
pub use journal::{fetch_dataset, FetchSummary};
pub use prompt::PromptTemplate;
