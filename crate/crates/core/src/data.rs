//! Record schema, file I/O, calibration/test splitting and the
//! logit-to-score transforms.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt::g17;
use crate::rng::SeededRng;

/// One labeled example with its answer-token logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitRecord {
    pub id: String,
    pub u_pos: f64,
    pub u_neg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_logits: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neg_index: Option<usize>,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_posterior: Option<f64>,
}

impl LogitRecord {
    pub fn new(id: impl Into<String>, u_pos: f64, u_neg: f64, label: u8) -> Self {
        Self {
            id: id.into(),
            u_pos,
            u_neg,
            full_logits: None,
            pos_index: None,
            neg_index: None,
            label,
            true_posterior: None,
        }
    }

    /// Checks every field-level invariant of the record.
    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::invalid(format!(
                "label must be 0 or 1, got {}",
                self.label
            )));
        }
        if !self.u_pos.is_finite() || !self.u_neg.is_finite() {
            return Err(Error::invalid("logits must be finite"));
        }
        if let Some(p) = self.true_posterior {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("true_posterior {p} outside [0, 1]")));
            }
        }
        match (&self.full_logits, self.pos_index, self.neg_index) {
            (None, None, None) => Ok(()),
            (Some(full), Some(pi), Some(ni)) => {
                let k = full.len();
                if pi == ni {
                    return Err(Error::invalid("pos_index and neg_index must differ"));
                }
                if pi >= k || ni >= k {
                    return Err(Error::invalid(format!(
                        "answer-token index out of range for {k} logits"
                    )));
                }
                if full.iter().any(|u| !u.is_finite()) {
                    return Err(Error::invalid("full_logits must be finite"));
                }
                if full[pi] != self.u_pos || full[ni] != self.u_neg {
                    return Err(Error::invalid(
                        "full_logits disagree with u_pos/u_neg at the answer-token indices",
                    ));
                }
                Ok(())
            }
            (Some(_), _, _) => Err(Error::invalid(
                "full_logits requires both pos_index and neg_index",
            )),
            (None, _, _) => Err(Error::invalid(
                "pos_index/neg_index given without full_logits",
            )),
        }
    }
}

/// A real-valued score paired with its binary label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub score: f64,
    pub label: u8,
}

impl ScoredExample {
    pub fn new(score: f64, label: u8) -> Result<Self> {
        if !score.is_finite() {
            return Err(Error::invalid(format!("score must be finite, got {score}")));
        }
        if label > 1 {
            return Err(Error::invalid(format!("label must be 0 or 1, got {label}")));
        }
        Ok(Self { score, label })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub seed: u64,
    pub calibration_fraction: f64,
}

impl SplitSpec {
    pub fn new(seed: u64, calibration_fraction: f64) -> Result<Self> {
        if !(calibration_fraction > 0.0 && calibration_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "calibration fraction must lie in (0, 1), got {calibration_fraction}"
            )));
        }
        Ok(Self {
            seed,
            calibration_fraction,
        })
    }

    /// Calibration-set size for `n` records: `floor(fraction * n)`.
    pub fn calibration_size(&self, n: usize) -> usize {
        (self.calibration_fraction * n as f64).floor() as usize
    }
}

/// How a record's logits become a positive-class score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScoreKind {
    /// Softmax over the two answer-token logits only.
    #[serde(rename = "softmax2")]
    Softmax2,
    /// Positive token's component of the softmax over the full logit vector.
    #[serde(rename = "softmaxK")]
    SoftmaxK,
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreKind::Softmax2 => "softmax2",
            ScoreKind::SoftmaxK => "softmaxK",
        })
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax2" | "softmax-2" => Ok(ScoreKind::Softmax2),
            "softmaxK" | "softmaxk" | "softmax-K" | "softmax-k" => Ok(ScoreKind::SoftmaxK),
            other => Err(Error::invalid(format!("unknown score kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFormat {
    Jsonl,
    Csv,
}

impl FromStr for RecordFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(RecordFormat::Jsonl),
            "csv" => Ok(RecordFormat::Csv),
            other => Err(Error::invalid(format!("unknown record format '{other}'"))),
        }
    }
}

/// Reads a record file, preserving file order.
pub fn read_records(path: impl AsRef<Path>, format: RecordFormat) -> Result<Vec<LogitRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_records(BufReader::new(file), path, format)
}

/// Parses records from any reader; `origin` only labels error messages.
pub fn parse_records<R: Read>(
    reader: R,
    origin: impl AsRef<Path>,
    format: RecordFormat,
) -> Result<Vec<LogitRecord>> {
    let origin = origin.as_ref();
    let parsed = match format {
        RecordFormat::Jsonl => parse_jsonl(BufReader::new(reader), origin)?,
        RecordFormat::Csv => parse_csv(reader, origin)?,
    };
    let mut seen = HashSet::with_capacity(parsed.len());
    for (line, record) in &parsed {
        record.validate().map_err(|e| parse_err(origin, *line, e))?;
        if !seen.insert(record.id.as_str()) {
            return Err(parse_err(
                origin,
                *line,
                format!("duplicate id '{}'", record.id),
            ));
        }
    }
    Ok(parsed.into_iter().map(|(_, r)| r).collect())
}

fn parse_err(origin: &Path, line: usize, message: impl ToString) -> Error {
    let message = match message.to_string() {
        m if m.starts_with("invalid input: ") => m["invalid input: ".len()..].to_string(),
        m => m,
    };
    Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    }
}

fn parse_jsonl<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<(usize, LogitRecord)>> {
    #[derive(Deserialize)]
    struct Raw {
        id: String,
        u_pos: f64,
        u_neg: f64,
        #[serde(default)]
        full_logits: Option<Vec<f64>>,
        #[serde(default)]
        pos_index: Option<usize>,
        #[serde(default)]
        neg_index: Option<usize>,
        label: i64,
        #[serde(default)]
        true_posterior: Option<f64>,
    }

    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: Raw = serde_json::from_str(&line).map_err(|e| parse_err(origin, lineno, e))?;
        if !(0..=1).contains(&raw.label) {
            return Err(parse_err(
                origin,
                lineno,
                format!("label must be 0 or 1, got {}", raw.label),
            ));
        }
        out.push((
            lineno,
            LogitRecord {
                id: raw.id,
                u_pos: raw.u_pos,
                u_neg: raw.u_neg,
                full_logits: raw.full_logits,
                pos_index: raw.pos_index,
                neg_index: raw.neg_index,
                label: raw.label as u8,
                true_posterior: raw.true_posterior,
            },
        ));
    }
    Ok(out)
}

fn parse_csv<R: Read>(reader: R, origin: &Path) -> Result<Vec<(usize, LogitRecord)>> {
    #[derive(Deserialize)]
    struct Row {
        id: String,
        u_pos: f64,
        u_neg: f64,
        label: i64,
        #[serde(default)]
        true_posterior: Option<f64>,
    }

    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut out = Vec::new();
    for result in rdr.records() {
        let rec = result.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(origin, line, e)
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let row: Row = rec
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(origin, line, e))?;
        if !(0..=1).contains(&row.label) {
            return Err(parse_err(
                origin,
                line,
                format!("label must be 0 or 1, got {}", row.label),
            ));
        }
        let mut record = LogitRecord::new(row.id, row.u_pos, row.u_neg, row.label as u8);
        record.true_posterior = row.true_posterior;
        out.push((line, record));
    }
    Ok(out)
}

/// Writes records as JSONL, one object per line.
pub fn write_records(records: &[LogitRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Deterministically partitions records into (calibration, test).
///
/// Records are first sorted by id so the result does not depend on input
/// order, then Fisher-Yates shuffled with the seeded generator. The first
/// `floor(fraction * n)` shuffled records form the calibration set.
pub fn split(
    records: &[LogitRecord],
    spec: SplitSpec,
) -> Result<(Vec<LogitRecord>, Vec<LogitRecord>)> {
    let n = records.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "splitting needs at least 2 records, got {n}"
        )));
    }
    let m = spec.calibration_size(n);
    if m == 0 || m == n {
        return Err(Error::invalid(format!(
            "calibration fraction {} of {n} records leaves an empty side",
            spec.calibration_fraction
        )));
    }
    let mut order: Vec<&LogitRecord> = records.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = SeededRng::new(spec.seed);
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        order.swap(i, j);
    }
    let test = order.split_off(m);
    Ok((
        order.into_iter().cloned().collect(),
        test.into_iter().cloned().collect(),
    ))
}

fn check_temperature(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!(
            "temperature must be positive and finite, got {tau}"
        )));
    }
    Ok(())
}

/// Positive-class score of a single record at temperature `tau`.
pub fn record_score(record: &LogitRecord, kind: ScoreKind, tau: f64) -> Result<f64> {
    check_temperature(tau)?;
    score_unchecked(record, kind, tau)
}

fn score_unchecked(record: &LogitRecord, kind: ScoreKind, tau: f64) -> Result<f64> {
    match kind {
        ScoreKind::Softmax2 => Ok(1.0 / (1.0 + (-(record.u_pos - record.u_neg) / tau).exp())),
        ScoreKind::SoftmaxK => {
            let (full, pos) = match (&record.full_logits, record.pos_index) {
                (Some(full), Some(pos)) => (full, pos),
                _ => {
                    return Err(Error::invalid(format!(
                        "record '{}' has no full_logits; softmaxK unavailable",
                        record.id
                    )))
                }
            };
            let max = full
                .iter()
                .map(|u| u / tau)
                .fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = full.iter().map(|u| (u / tau - max).exp()).sum();
            Ok((full[pos] / tau - max).exp() / denom)
        }
    }
}

/// Maps records to scored examples, preserving order and labels.
pub fn transform_scores(
    records: &[LogitRecord],
    kind: ScoreKind,
    tau: f64,
) -> Result<Vec<ScoredExample>> {
    check_temperature(tau)?;
    records
        .iter()
        .map(|r| {
            Ok(ScoredExample {
                score: score_unchecked(r, kind, tau)?,
                label: r.label,
            })
        })
        .collect()
}

/// Writes a `score,label` CSV with 17-significant-digit scores.
pub fn write_scores_csv(examples: &[ScoredExample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "score,label").map_err(io)?;
    for ex in examples {
        writeln!(w, "{},{}", g17(ex.score), ex.label).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a `score,label` CSV.
pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<Vec<ScoredExample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let mut out = Vec::new();
    for result in rdr.deserialize::<(f64, i64)>() {
        let (score, label) = result?;
        if !(0..=1).contains(&label) {
            return Err(Error::invalid(format!("label must be 0 or 1, got {label}")));
        }
        out.push(ScoredExample::new(score, label as u8)?);
    }
    Ok(out)
}

/// Persists any serializable report as pretty-printed JSON.
pub fn write_report<T: Serialize>(report: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, report)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn jsonl(text: &str) -> Result<Vec<LogitRecord>> {
        parse_records(text.as_bytes(), "mem.jsonl", RecordFormat::Jsonl)
    }

    fn records(n: usize) -> Vec<LogitRecord> {
        (0..n)
            .map(|i| LogitRecord::new(format!("r{i:05}"), i as f64, 0.0, (i % 2) as u8))
            .collect()
    }

    #[test]
    fn reads_minimal_line() {
        let recs = jsonl(r#"{"id":"q1","u_pos":2.0,"u_neg":0.0,"label":1}"#).unwrap();
        assert_eq!(recs, vec![LogitRecord::new("q1", 2.0, 0.0, 1)]);
        assert!(recs[0].full_logits.is_none());
    }

    #[test]
    fn bad_label_names_the_line() {
        let text = "{\"id\":\"a\",\"u_pos\":0,\"u_neg\":0,\"label\":1}\n{\"id\":\"b\",\"u_pos\":0,\"u_neg\":0,\"label\":2}\n";
        let err = jsonl(text).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
        assert!(err.contains("label"), "{err}");
    }

    #[test]
    fn full_logits_must_agree_with_answer_logits() {
        let ok = r#"{"id":"a","u_pos":2.0,"u_neg":1.0,"full_logits":[0.0,2.0,1.0],"pos_index":1,"neg_index":2,"label":0}"#;
        assert!(jsonl(ok).is_ok());
        let bad = r#"{"id":"a","u_pos":1.5,"u_neg":1.0,"full_logits":[0.0,2.0,1.0],"pos_index":1,"neg_index":2,"label":0}"#;
        assert!(jsonl(bad).is_err());
        let same = r#"{"id":"a","u_pos":2.0,"u_neg":2.0,"full_logits":[0.0,2.0,1.0],"pos_index":1,"neg_index":1,"label":0}"#;
        assert!(jsonl(same).is_err());
    }

    #[test]
    fn rejects_missing_field_duplicates_and_garbage() {
        assert!(jsonl(r#"{"id":"a","u_pos":0,"label":1}"#).is_err());
        let dup = "{\"id\":\"a\",\"u_pos\":0,\"u_neg\":0,\"label\":1}\n{\"id\":\"a\",\"u_pos\":1,\"u_neg\":0,\"label\":0}";
        let err = jsonl(dup).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
        assert!(jsonl("not json").is_err());
    }

    #[test]
    fn csv_records_and_non_finite_logits() {
        let text = "id,u_pos,u_neg,label\na,1.5,0,1\nb,-1,0.25,0\n";
        let recs = parse_records(text.as_bytes(), "mem.csv", RecordFormat::Csv).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].u_neg, 0.25);
        let text = "id,u_pos,u_neg,label\na,NaN,0,1\n";
        let err = parse_records(text.as_bytes(), "mem.csv", RecordFormat::Csv).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let spec = SplitSpec::new(0, 0.2).unwrap();
        assert_eq!(spec.calibration_size(12_697), 2_539);
        let (cal, test) = split(&records(10), spec).unwrap();
        assert_eq!((cal.len(), test.len()), (2, 8));
    }

    #[test]
    fn split_is_deterministic_and_order_independent() {
        let recs = records(10);
        let spec = SplitSpec::new(42, 0.2).unwrap();
        let a = split(&recs, spec).unwrap();
        let b = split(&recs, spec).unwrap();
        assert_eq!(a, b);
        let mut reversed = recs.clone();
        reversed.reverse();
        assert_eq!(split(&reversed, spec).unwrap(), a);
    }

    #[test]
    fn split_rejects_empty_sides() {
        let spec = SplitSpec::new(1, 0.05).unwrap();
        assert!(split(&records(10), spec).is_err());
        assert!(split(&records(1), SplitSpec::new(1, 0.5).unwrap()).is_err());
        assert!(SplitSpec::new(1, 1.0).is_err());
        assert!(SplitSpec::new(1, 0.0).is_err());
    }

    #[test]
    fn softmax2_values() {
        let r = LogitRecord::new("a", 2.0, 0.0, 1);
        assert_eq!(
            record_score(&r, ScoreKind::Softmax2, 1.0).unwrap(),
            0.8807970779778823
        );
        let tie = LogitRecord::new("b", 3.7, 3.7, 0);
        for tau in [0.01, 1.0, 250.0] {
            assert_eq!(record_score(&tie, ScoreKind::Softmax2, tau).unwrap(), 0.5);
        }
        assert!(record_score(&r, ScoreKind::Softmax2, 0.0).is_err());
        assert!(record_score(&r, ScoreKind::Softmax2, -1.0).is_err());
    }

    #[test]
    fn softmax_k_uniform_and_missing() {
        let mut r = LogitRecord::new("a", 1.0, 1.0, 1);
        assert!(record_score(&r, ScoreKind::SoftmaxK, 1.0).is_err());
        r.full_logits = Some(vec![1.0; 4]);
        r.pos_index = Some(0);
        r.neg_index = Some(3);
        for tau in [0.1, 1.0, 9.0] {
            let s = record_score(&r, ScoreKind::SoftmaxK, tau).unwrap();
            assert!((s - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_k_survives_huge_logits() {
        let mut r = LogitRecord::new("a", 1000.0, 999.0, 1);
        r.full_logits = Some(vec![1000.0, 999.0, -5.0]);
        r.pos_index = Some(0);
        r.neg_index = Some(1);
        let s = record_score(&r, ScoreKind::SoftmaxK, 1.0).unwrap();
        assert!((s - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn scores_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_scores_csv(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "score,label\n");
        let two = [
            ScoredExample::new(0.1, 0).unwrap(),
            ScoredExample::new(0.9, 1).unwrap(),
        ];
        write_scores_csv(&two, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(read_scores_csv(&path).unwrap(), two);
    }

    proptest! {
        #[test]
        fn scores_csv_round_trip(raw in prop::collection::vec((-1e6f64..1e6, 0u8..2), 0..40)) {
            let examples: Vec<_> = raw.iter().map(|&(s, l)| ScoredExample { score: s, label: l }).collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("s.csv");
            write_scores_csv(&examples, &path).unwrap();
            let back = read_scores_csv(&path).unwrap();
            prop_assert_eq!(back.len(), examples.len());
            for (a, b) in back.iter().zip(&examples) {
                prop_assert_eq!(a.score.to_bits(), b.score.to_bits());
                prop_assert_eq!(a.label, b.label);
            }
        }

        #[test]
        fn softmax2_order_is_temperature_free(diffs in prop::collection::vec(-3f64..3.0, 2..30)) {
            let recs: Vec<_> = diffs.iter().enumerate()
                .map(|(i, &d)| LogitRecord::new(format!("r{i}"), d, 0.0, 0))
                .collect();
            let perm = |tau: f64| {
                let s = transform_scores(&recs, ScoreKind::Softmax2, tau).unwrap();
                let mut idx: Vec<usize> = (0..s.len()).collect();
                idx.sort_by(|&a, &b| s[a].score.total_cmp(&s[b].score).then(a.cmp(&b)));
                idx
            };
            let reference: Vec<usize> = {
                let mut idx: Vec<usize> = (0..diffs.len()).collect();
                idx.sort_by(|&a, &b| diffs[a].total_cmp(&diffs[b]).then(a.cmp(&b)));
                idx
            };
            for tau in [0.1, 1.0, 10.0, 100.0] {
                prop_assert_eq!(perm(tau), reference.clone());
            }
        }

        #[test]
        fn split_partitions_input(n in 2usize..60, seed in any::<u64>(), frac in 0.05f64..0.95) {
            let spec = SplitSpec::new(seed, frac).unwrap();
            let m = spec.calibration_size(n);
            prop_assume!(m > 0 && m < n);
            let recs = records(n);
            let (cal, test) = split(&recs, spec).unwrap();
            prop_assert_eq!(cal.len(), m);
            let mut ids: Vec<_> = cal.iter().chain(&test).map(|r| r.id.clone()).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
        }
    }
}
