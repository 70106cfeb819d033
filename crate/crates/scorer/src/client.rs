//! Single-prompt scoring against an OpenAI-style completions endpoint.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Default logit for an answer token missing from the top-L list; its
/// softmax weight is zero for all practical purposes.
pub const DEFAULT_MISSING_FILL: f64 = -1e4;

/// Start-of-word marker used by SentencePiece vocabularies.
const SPIECE_SPACE: char = '\u{2581}';

/// An answer token as configured on the command line.
///
/// A leading `_` requests the start-of-word variant of the token, which
/// endpoints report either with the SentencePiece marker (`▁Yes`) or with a
/// leading space (` Yes`). Without it the token must match exactly.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AnswerToken {
    spec: String,
    word: String,
    start_of_word: bool,
}

impl AnswerToken {
    pub fn new(spec: &str) -> Result<Self> {
        if spec.is_empty() {
            return Err(Error::Config("answer token must not be empty".into()));
        }
        let (word, start_of_word) = match spec.strip_prefix('_') {
            Some(rest) if !rest.is_empty() => (rest.to_string(), true),
            _ => match spec.strip_prefix(SPIECE_SPACE) {
                Some(rest) if !rest.is_empty() => (rest.to_string(), true),
                _ => (spec.to_string(), false),
            },
        };
        Ok(Self {
            spec: spec.to_string(),
            word,
            start_of_word,
        })
    }

    /// The token as written in the configuration.
    pub fn spec(&self) -> &str {
        &self.spec
    }

    pub fn matches(&self, reported: &str) -> bool {
        if self.start_of_word {
            reported
                .strip_prefix(SPIECE_SPACE)
                .or_else(|| reported.strip_prefix(' '))
                .is_some_and(|w| w == self.word)
        } else {
            reported == self.word
        }
    }
}

impl fmt::Display for AnswerToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MissingTokenPolicy {
    /// Substitute this log-probability.
    Fill(f64),
    Error,
}

impl FromStr for MissingTokenPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(MissingTokenPolicy::Error),
            "fill" => Ok(MissingTokenPolicy::Fill(DEFAULT_MISSING_FILL)),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(MissingTokenPolicy::Fill)
                .ok_or_else(|| Error::Config(format!("invalid missing-token policy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScorerConfig {
    /// API root; requests go to `{base_url}/completions`.
    pub base_url: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_token_env: String,
    pub model: String,
    pub answer_tokens: (AnswerToken, AnswerToken),
    pub top_logprobs: usize,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub missing_token: MissingTokenPolicy,
}

impl ScorerConfig {
    pub fn new(
        base_url: impl Into<String>,
        model: impl Into<String>,
        pos: &str,
        neg: &str,
    ) -> Result<Self> {
        Ok(Self {
            base_url: base_url.into(),
            auth_token_env: "VENNCAL_API_TOKEN".into(),
            model: model.into(),
            answer_tokens: (AnswerToken::new(pos)?, AnswerToken::new(neg)?),
            top_logprobs: 20,
            timeout: Duration::from_secs(60),
            max_in_flight: 4,
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
            missing_token: MissingTokenPolicy::Fill(DEFAULT_MISSING_FILL),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_logprobs < 2 {
            return Err(Error::Config("top_logprobs must be at least 2".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        if self.timeout.is_zero() {
            return Err(Error::Config("timeout must be positive".into()));
        }
        if self.answer_tokens.0 == self.answer_tokens.1 {
            return Err(Error::Config("answer tokens must differ".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(Error::Config(format!(
                "base URL '{}' is not http(s)",
                self.base_url
            )));
        }
        Ok(())
    }

    pub fn endpoint(&self) -> String {
        format!("{}/completions", self.base_url.trim_end_matches('/'))
    }

    /// JSON body asking for one token with the top-L log-probabilities.
    pub fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.model,
            "prompt": prompt,
            "max_tokens": 1,
            "logprobs": self.top_logprobs,
            "temperature": 0,
        })
    }
}

/// A validated configuration plus credential and HTTP agent.
pub struct Scorer {
    config: ScorerConfig,
    token: String,
    agent: ureq::Agent,
}

enum Attempt {
    Retry(String),
    Fail(Error),
}

impl Scorer {
    /// Validates the configuration and reads the credential from the
    /// environment. Never sends a request.
    pub fn new(config: ScorerConfig) -> Result<Self> {
        config.validate()?;
        let token = std::env::var(&config.auth_token_env)
            .ok()
            .filter(|t| !t.is_empty())
            .ok_or_else(|| Error::MissingCredential(config.auth_token_env.clone()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            config,
            token,
            agent,
        })
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.config
    }

    /// Log-probabilities of the (positive, negative) answer tokens at the
    /// first generated position, keyed by the configured token spec.
    pub fn fetch_logits(&self, prompt: &str) -> Result<HashMap<String, f64>> {
        let response = self.post_with_retries(&self.config.request_body(prompt))?;
        let top = first_position_logprobs(&response)?;
        let (pos, neg) = &self.config.answer_tokens;
        let mut out = HashMap::with_capacity(2);
        for token in [pos, neg] {
            let found = top
                .iter()
                .filter(|(k, _)| token.matches(k))
                .map(|(_, v)| *v)
                .reduce(f64::max);
            let value = match (found, self.config.missing_token) {
                (Some(v), _) => v,
                (None, MissingTokenPolicy::Fill(fill)) => fill,
                (None, MissingTokenPolicy::Error) => {
                    return Err(Error::MissingToken(token.spec().to_string()))
                }
            };
            out.insert(token.spec().to_string(), value);
        }
        Ok(out)
    }

    /// `(u_pos, u_neg)` for a prompt.
    pub fn fetch_pair(&self, prompt: &str) -> Result<(f64, f64)> {
        let map = self.fetch_logits(prompt)?;
        let (pos, neg) = &self.config.answer_tokens;
        Ok((map[pos.spec()], map[neg.spec()]))
    }

    fn post_with_retries(&self, body: &Value) -> Result<Value> {
        let url = self.config.endpoint();
        let mut backoff = self.config.initial_backoff;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.post_once(&url, body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(message)) => {
                    if attempts > self.config.max_retries {
                        return Err(Error::Transport { attempts, message });
                    }
                    log::debug!("attempt {attempts} failed ({message}); retrying in {backoff:?}");
                    thread::sleep(backoff);
                    backoff *= 2;
                }
            }
        }
    }

    fn post_once(&self, url: &str, body: &Value) -> std::result::Result<Value, Attempt> {
        let mut response = self
            .agent
            .post(url)
            .header("Authorization", &format!("Bearer {}", self.token))
            .send_json(body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| Attempt::Fail(Error::Malformed(format!("invalid JSON: {e}")))),
            408 | 429 | 500..=599 => Attempt::Retry(format!("HTTP {status}")).into_err(),
            _ => Attempt::Fail(Error::Transport {
                attempts: 1,
                message: format!(
                    "HTTP {status}: {}",
                    text.chars().take(200).collect::<String>()
                ),
            })
            .into_err(),
        }
    }
}

impl Attempt {
    fn into_err<T>(self) -> std::result::Result<T, Attempt> {
        Err(self)
    }
}

/// Extracts the token -> logprob map of the first generated position.
///
/// Accepted shapes:
/// - `choices[0].logprobs.top_logprobs[0]` as an object (legacy completions),
/// - `choices[0].logprobs.content[0].top_logprobs` as `[{token, logprob}]`,
/// - a top-level `top_logprobs` object.
pub fn first_position_logprobs(response: &Value) -> Result<Vec<(String, f64)>> {
    let malformed = |what: &str| Error::Malformed(what.to_string());
    let entry = if let Some(top) = response.get("top_logprobs") {
        top
    } else {
        let logprobs = response
            .get("choices")
            .and_then(|c| c.get(0))
            .and_then(|c| c.get("logprobs"))
            .ok_or_else(|| malformed("no choices[0].logprobs"))?;
        if let Some(top) = logprobs.get("top_logprobs") {
            top.get(0).ok_or_else(|| malformed("empty top_logprobs"))?
        } else {
            logprobs
                .get("content")
                .and_then(|c| c.get(0))
                .and_then(|c| c.get("top_logprobs"))
                .ok_or_else(|| malformed("no top_logprobs in logprobs"))?
        }
    };
    let pairs: Vec<(String, f64)> = match entry {
        Value::Object(map) => map
            .iter()
            .map(|(k, v)| {
                v.as_f64()
                    .map(|lp| (k.clone(), lp))
                    .ok_or_else(|| malformed("non-numeric logprob"))
            })
            .collect::<Result<_>>()?,
        Value::Array(items) => items
            .iter()
            .map(|item| {
                let token = item.get("token").and_then(Value::as_str);
                let lp = item.get("logprob").and_then(Value::as_f64);
                match (token, lp) {
                    (Some(t), Some(lp)) => Ok((t.to_string(), lp)),
                    _ => Err(malformed("top_logprobs entries need token and logprob")),
                }
            })
            .collect::<Result<_>>()?,
        _ => return Err(malformed("top_logprobs is neither an object nor a list")),
    };
    if pairs.iter().any(|(_, lp)| !lp.is_finite()) {
        return Err(malformed("non-finite logprob"));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_matching() {
        let sow = AnswerToken::new("_Yes").unwrap();
        assert!(sow.matches("\u{2581}Yes"));
        assert!(sow.matches(" Yes"));
        assert!(!sow.matches("Yes"));
        assert!(!sow.matches(" Yesterday"));
        let plain = AnswerToken::new("Yes").unwrap();
        assert!(plain.matches("Yes"));
        assert!(!plain.matches(" Yes"));
        assert!(AnswerToken::new("").is_err());
        assert_eq!(AnswerToken::new("_").unwrap().word, "_");
    }

    #[test]
    fn response_shapes() {
        let legacy =
            json!({"choices": [{"logprobs": {"top_logprobs": [{"Yes": -0.5, "No": -1.0}]}}]});
        let mut got = first_position_logprobs(&legacy).unwrap();
        got.sort_by(|a, b| a.0.cmp(&b.0));
        assert_eq!(got, vec![("No".into(), -1.0), ("Yes".into(), -0.5)]);

        let chat = json!({"choices": [{"logprobs": {"content": [{"token": "Yes", "logprob": -0.1,
            "top_logprobs": [{"token": "Yes", "logprob": -0.1}, {"token": "No", "logprob": -2.5}]}]}}]});
        assert_eq!(first_position_logprobs(&chat).unwrap().len(), 2);

        let flat = json!({"top_logprobs": {"A": -3.0}});
        assert_eq!(
            first_position_logprobs(&flat).unwrap(),
            vec![("A".into(), -3.0)]
        );

        assert!(first_position_logprobs(&json!({"choices": []})).is_err());
        assert!(first_position_logprobs(&json!({"top_logprobs": {"A": "x"}})).is_err());
    }

    #[test]
    fn request_body_asks_for_one_token() {
        let cfg = ScorerConfig::new("http://localhost:1", "m", "_Yes", "_No").unwrap();
        let body = cfg.request_body("hi");
        assert_eq!(body["max_tokens"], 1);
        assert_eq!(body["logprobs"], 20);
        assert_eq!(body["temperature"], 0);
        assert_eq!(body["prompt"], "hi");
        assert_eq!(cfg.endpoint(), "http://localhost:1/completions");
    }

    #[test]
    fn config_validation() {
        let mut cfg = ScorerConfig::new("http://localhost:1", "m", "Yes", "No").unwrap();
        assert!(cfg.validate().is_ok());
        cfg.top_logprobs = 1;
        assert!(cfg.validate().is_err());
        cfg.top_logprobs = 5;
        cfg.max_in_flight = 0;
        assert!(cfg.validate().is_err());
        cfg.max_in_flight = 1;
        cfg.base_url = "localhost".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn missing_credential_is_detected_up_front() {
        let mut cfg = ScorerConfig::new("http://127.0.0.1:9", "m", "Yes", "No").unwrap();
        cfg.auth_token_env = "VENNCAL_TEST_SURELY_UNSET_VARIABLE".into();
        assert!(matches!(Scorer::new(cfg), Err(Error::MissingCredential(_))));
    }

    #[test]
    fn missing_policy_parsing() {
        assert_eq!(
            "error".parse::<MissingTokenPolicy>().unwrap(),
            MissingTokenPolicy::Error
        );
        assert_eq!(
            "-500".parse::<MissingTokenPolicy>().unwrap(),
            MissingTokenPolicy::Fill(-500.0)
        );
        assert!("nan".parse::<MissingTokenPolicy>().is_err());
    }
}
