//! Resumable batch scoring.
//!
//! Every finished request is appended (and flushed) to a JSONL journal next
//! to the output file: a record line on success, `{"id", "error"}` on
//! failure. A rerun skips ids that already have a record and retries the
//! failed ones. Once the batch ends the output file is rewritten from the
//! journal in input order, so it does not depend on completion order.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};
use venncal_core::data::write_records;
use venncal_core::LogitRecord;

use crate::client::Scorer;
use crate::dataset::DatasetExample;
use crate::error::{Error, Result};
use crate::prompt::PromptTemplate;

#[derive(Debug, Serialize, Deserialize)]
struct ErrorEntry {
    id: String,
    error: String,
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct FetchSummary {
    /// Records for every example that has one, in input order.
    pub records: Vec<LogitRecord>,
    /// Requests issued in this run.
    pub requested: usize,
    /// Examples skipped because the journal already held their record.
    pub resumed: usize,
    /// `(id, message)` for examples still without a record.
    pub failed: Vec<(String, String)>,
}

/// Journal location for an output file: `<out>.journal`.
pub fn journal_path(out_path: &Path) -> PathBuf {
    let mut name = out_path.as_os_str().to_owned();
    name.push(".journal");
    PathBuf::from(name)
}

/// Completed records found in a journal. A torn final line (interrupted
/// write) is ignored.
pub fn load_journal(path: &Path) -> Result<HashMap<String, LogitRecord>> {
    let mut done = HashMap::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(done),
        Err(e) => return Err(Error::io(path, e)),
    };
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                log::warn!(
                    "{}:{}: skipping unreadable journal line ({e})",
                    path.display(),
                    idx + 1
                );
                continue;
            }
        };
        if value.get("error").is_some() {
            continue;
        }
        match serde_json::from_value::<LogitRecord>(value) {
            Ok(rec) => {
                done.insert(rec.id.clone(), rec);
            }
            Err(e) => log::warn!(
                "{}:{}: skipping journal line ({e})",
                path.display(),
                idx + 1
            ),
        }
    }
    Ok(done)
}

/// Scores `examples` with at most `max_in_flight` concurrent requests,
/// journaling as it goes, and writes the record file to `out_path`.
///
/// Per-example failures land in the journal and in
/// [`FetchSummary::failed`]; only configuration and I/O problems abort.
pub fn fetch_dataset(
    scorer: &Scorer,
    examples: &[DatasetExample],
    template: &PromptTemplate,
    out_path: &Path,
) -> Result<FetchSummary> {
    let mut ids = HashSet::new();
    if let Some(dup) = examples.iter().find(|e| !ids.insert(e.id.as_str())) {
        return Err(Error::Config(format!("duplicate example id '{}'", dup.id)));
    }
    let journal = journal_path(out_path);
    let mut done = load_journal(&journal)?;
    let pending: Vec<&DatasetExample> = examples
        .iter()
        .filter(|e| !done.contains_key(&e.id))
        .collect();
    let resumed = examples.len() - pending.len();

    let mut failed_now = HashMap::new();
    if !pending.is_empty() {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&journal)
            .map_err(|e| Error::io(&journal, e))?;
        let mut writer = BufWriter::new(file);
        let next = AtomicUsize::new(0);
        let workers = scorer.config().max_in_flight.min(pending.len());
        let (tx, rx) = mpsc::channel::<(usize, Result<LogitRecord>)>();

        thread::scope(|s| -> Result<()> {
            for _ in 0..workers {
                let tx = tx.clone();
                let (next, pending) = (&next, &pending);
                s.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(ex) = pending.get(i) else { break };
                    let result = score_example(scorer, ex, template);
                    if tx.send((i, result)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            for (i, result) in rx {
                let ex = pending[i];
                let line = match result {
                    Ok(rec) => {
                        let line = serde_json::to_string(&rec)?;
                        done.insert(rec.id.clone(), rec);
                        line
                    }
                    Err(e) => {
                        log::warn!("example {}: {e}", ex.id);
                        let line = serde_json::to_string(&ErrorEntry {
                            id: ex.id.clone(),
                            error: e.to_string(),
                        })?;
                        failed_now.insert(ex.id.clone(), e.to_string());
                        line
                    }
                };
                writeln!(writer, "{line}")
                    .and_then(|_| writer.flush())
                    .map_err(|e| Error::io(&journal, e))?;
            }
            Ok(())
        })?;
    }

    let mut summary = FetchSummary {
        requested: pending.len(),
        resumed,
        ..FetchSummary::default()
    };
    for ex in examples {
        match done.remove(&ex.id) {
            Some(rec) => summary.records.push(rec),
            None => summary.failed.push((
                ex.id.clone(),
                failed_now
                    .remove(&ex.id)
                    .unwrap_or_else(|| "not fetched".to_string()),
            )),
        }
    }
    write_records(&summary.records, out_path)?;
    Ok(summary)
}

fn score_example(
    scorer: &Scorer,
    ex: &DatasetExample,
    template: &PromptTemplate,
) -> Result<LogitRecord> {
    let prompt = template.render(&ex.fields)?;
    let (u_pos, u_neg) = scorer.fetch_pair(&prompt)?;
    let rec = LogitRecord::new(ex.id.clone(), u_pos, u_neg, ex.label);
    rec.validate()?;
    Ok(rec)
}

/// Writes the ids that failed, one JSON object per line, for inspection.
pub fn write_failures(failed: &[(String, String)], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (id, error) in failed {
        let line = serde_json::to_string(&ErrorEntry {
            id: id.clone(),
            error: error.clone(),
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
