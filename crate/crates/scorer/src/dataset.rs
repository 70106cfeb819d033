//! Dataset adapters: raw JSONL examples to prompt fields plus a binary label.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::prompt::PromptTemplate;

/// One example ready to be prompted.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetExample {
    pub id: String,
    pub fields: HashMap<String, String>,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// `question`, `passage` (or `context`) and a boolean `answer` (or 0/1
    /// `label`).
    BoolQ,
    /// `sentence` (or `review`/`text`) and a `label` in `[0, 1]`, rounded to
    /// the nearest class.
    Sentiment,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "boolq" => Ok(DatasetKind::BoolQ),
            "sentiment" | "sst" | "sst2" => Ok(DatasetKind::Sentiment),
            other => Err(Error::Config(format!("unknown dataset '{other}'"))),
        }
    }
}

impl DatasetKind {
    pub fn template(&self) -> PromptTemplate {
        match self {
            DatasetKind::BoolQ => PromptTemplate::boolq(),
            DatasetKind::Sentiment => PromptTemplate::sentiment(),
        }
    }

    /// Placeholders this adapter fills.
    pub fn fields(&self) -> &'static [&'static str] {
        match self {
            DatasetKind::BoolQ => &["context", "question"],
            DatasetKind::Sentiment => &["review"],
        }
    }

    /// Converts one JSON object; `index` names examples that lack an id.
    pub fn parse(
        &self,
        value: &Value,
        index: usize,
    ) -> std::result::Result<DatasetExample, String> {
        let obj = value.as_object().ok_or("expected a JSON object")?;
        let text = |keys: &[&str]| -> std::result::Result<String, String> {
            keys.iter()
                .find_map(|k| obj.get(*k).and_then(Value::as_str))
                .map(str::to_string)
                .ok_or_else(|| format!("missing string field {}", keys.join("/")))
        };
        let id = match obj.get("id").or_else(|| obj.get("idx")) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            Some(_) => return Err("id must be a string or number".into()),
            None => format!("{index}"),
        };
        let mut fields = HashMap::new();
        let label = match self {
            DatasetKind::BoolQ => {
                fields.insert("question".into(), text(&["question"])?);
                fields.insert("context".into(), text(&["passage", "context"])?);
                match (obj.get("answer"), obj.get("label")) {
                    (Some(Value::Bool(b)), _) => *b as u8,
                    (_, Some(v)) => binary_label(v)?,
                    _ => return Err("missing answer/label".into()),
                }
            }
            DatasetKind::Sentiment => {
                fields.insert("review".into(), text(&["sentence", "review", "text"])?);
                let y = obj
                    .get("label")
                    .and_then(Value::as_f64)
                    .ok_or("missing numeric label")?;
                if !(0.0..=1.0).contains(&y) {
                    return Err(format!("label {y} outside [0, 1]"));
                }
                y.round() as u8
            }
        };
        Ok(DatasetExample { id, fields, label })
    }

    pub fn read(&self, path: impl AsRef<Path>) -> Result<Vec<DatasetExample>> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut out = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Dataset {
                path: path.to_path_buf(),
                line: idx + 1,
                message,
            };
            let value: Value = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            let ex = self.parse(&value, out.len()).map_err(err)?;
            if !seen.insert(ex.id.clone()) {
                return Err(err(format!("duplicate id '{}'", ex.id)));
            }
            out.push(ex);
        }
        Ok(out)
    }
}

fn binary_label(v: &Value) -> std::result::Result<u8, String> {
    match v {
        Value::Bool(b) => Ok(*b as u8),
        Value::Number(n) if n.as_u64() == Some(0) => Ok(0),
        Value::Number(n) if n.as_u64() == Some(1) => Ok(1),
        other => Err(format!("label must be 0/1 or boolean, got {other}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn boolq_rows() {
        let ex = DatasetKind::BoolQ
            .parse(
                &json!({"question": "q?", "passage": "p.", "answer": true}),
                3,
            )
            .unwrap();
        assert_eq!(ex.id, "3");
        assert_eq!(ex.label, 1);
        assert_eq!(ex.fields["context"], "p.");
        let ex = DatasetKind::BoolQ
            .parse(
                &json!({"id": "b1", "question": "q?", "context": "c", "label": 0}),
                0,
            )
            .unwrap();
        assert_eq!((ex.id.as_str(), ex.label), ("b1", 0));
        assert!(DatasetKind::BoolQ
            .parse(&json!({"question": "q?", "passage": "p"}), 0)
            .is_err());
    }

    #[test]
    fn sentiment_labels_round() {
        let parse = |y: f64| {
            DatasetKind::Sentiment
                .parse(&json!({"sentence": "fine", "label": y}), 0)
                .map(|e| e.label)
        };
        assert_eq!(parse(0.2).unwrap(), 0);
        assert_eq!(parse(0.8).unwrap(), 1);
        assert!(parse(1.5).is_err());
    }

    #[test]
    fn adapters_match_templates() {
        for kind in [DatasetKind::BoolQ, DatasetKind::Sentiment] {
            kind.template().require(kind.fields()).unwrap();
        }
    }
}
