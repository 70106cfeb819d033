//! Calibration and discrimination metrics.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt::g17;

/// Number of reliability bins used unless stated otherwise.
pub const DEFAULT_BINS: usize = 10;

fn check_lengths(preds: usize, labels: usize) -> Result<()> {
    if preds != labels {
        return Err(Error::invalid(format!(
            "{preds} predictions but {labels} labels"
        )));
    }
    if preds == 0 {
        return Err(Error::invalid("metrics need at least one prediction"));
    }
    Ok(())
}

fn check_labels(labels: &[u8]) -> Result<()> {
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub count: usize,
    pub sum_pred: f64,
    pub sum_label: f64,
}

impl Bin {
    pub fn mean_pred(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum_pred / self.count as f64)
    }

    pub fn frac_pos(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum_label / self.count as f64)
    }
}

/// Equal-width bins over `[0, 1]`. Bin `k` (1-based) covers
/// `((k - 1) / M, k / M]`; a prediction of exactly 0 goes to bin 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    bins: Vec<Bin>,
}

impl ReliabilityBins {
    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn bins(&self) -> &[Bin] {
        &self.bins
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// Lower and upper edge of the 1-based bin `k`.
    pub fn edges(&self, k: usize) -> (f64, f64) {
        let m = self.bins.len() as f64;
        ((k - 1) as f64 / m, k as f64 / m)
    }

    /// 1-based bin for a probability in `[0, 1]`, consistent with
    /// [`edges`](Self::edges).
    pub fn bin_of(p: f64, m: usize) -> usize {
        let mf = m as f64;
        let mut k = ((p * mf).ceil() as usize).clamp(1, m);
        while k > 1 && p <= (k - 1) as f64 / mf {
            k -= 1;
        }
        while k < m && p > k as f64 / mf {
            k += 1;
        }
        k
    }

    /// Writes `bin,lo,hi,count,mean_pred,frac_pos`, one row per bin; empty
    /// bins leave the two mean columns blank.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(w, "bin,lo,hi,count,mean_pred,frac_pos").map_err(io)?;
        for (i, b) in self.bins.iter().enumerate() {
            let (lo, hi) = self.edges(i + 1);
            let opt = |v: Option<f64>| v.map(g17).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{}",
                i + 1,
                g17(lo),
                g17(hi),
                b.count,
                opt(b.mean_pred()),
                opt(b.frac_pos())
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

pub fn reliability_bins(preds: &[f64], labels: &[u8], m: usize) -> Result<ReliabilityBins> {
    check_lengths(preds.len(), labels.len())?;
    check_labels(labels)?;
    if m == 0 {
        return Err(Error::invalid("need at least one bin"));
    }
    let mut bins = vec![Bin::default(); m];
    for (&p, &y) in preds.iter().zip(labels) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("prediction {p} outside [0, 1]")));
        }
        let b = &mut bins[ReliabilityBins::bin_of(p, m) - 1];
        b.count += 1;
        b.sum_pred += p;
        b.sum_label += y as f64;
    }
    Ok(ReliabilityBins { bins })
}

/// Expected calibration error: count-weighted mean over bins of
/// `|positive fraction - mean prediction|`.
pub fn ece(bins: &ReliabilityBins) -> Result<f64> {
    let n = bins.total();
    if n == 0 {
        return Err(Error::invalid("ECE of an empty bin set"));
    }
    // |B| * |frac - mean| = |sum_label - sum_pred|
    let gap: f64 = bins
        .bins
        .iter()
        .map(|b| (b.sum_label - b.sum_pred).abs())
        .sum();
    Ok(gap / n as f64)
}

pub fn brier(preds: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    check_labels(labels)?;
    let sq: f64 = preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| (p - y as f64).powi(2))
        .sum();
    Ok(sq / preds.len() as f64)
}

/// Area under the ROC curve via the Mann-Whitney statistic with midranks,
/// so tied positive/negative pairs count one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    check_labels(labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("AUC scores must not be NaN"));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid(
            "AUC needs both positive and negative labels",
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Ranks doubled so midranks stay integral.
    let mut pos_rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank2 = (i + 1 + j + 1) as u128;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        pos_rank_sum2 += midrank2 * tied_pos;
        i = j + 1;
    }
    let (np, nn) = (n_pos as u128, n_neg as u128);
    let u2 = pos_rank_sum2 - np * (np + 1);
    Ok(u2 as f64 / (2 * np * nn) as f64)
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// Unweighted mean of the per-class F1 scores after thresholding
/// (`pred >= threshold` means class 1).
pub fn f1_macro(preds: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    check_labels(labels)?;
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &y) in preds.iter().zip(labels) {
        match (p >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(0.5 * (f1(tp, fp, fn_) + f1(tn, fn_, fp)))
}

/// Identifies the configuration a report belongs to.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTag {
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_pair: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

impl RunTag {
    pub fn new(method: impl Into<String>) -> Self {
        Self {
            method: method.into(),
            ..Self::default()
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = Some(tau);
        self
    }

    pub fn with_token_pair(mut self, pair: impl Into<String>) -> Self {
        self.token_pair = Some(pair.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub tag: RunTag,
    pub n: usize,
    pub bins: usize,
    pub ece: f64,
    pub brier: f64,
    pub auc: f64,
    pub f1_macro: f64,
}

/// Computes every metric. ECE, Brier and F1 use `preds`; AUC ranks
/// `auc_scores`, which may differ from `preds` (e.g. raw scores).
pub fn evaluate_all(
    preds: &[f64],
    auc_scores: &[f64],
    labels: &[u8],
    bins: usize,
    tag: RunTag,
) -> Result<MetricsReport> {
    check_lengths(auc_scores.len(), labels.len())?;
    let rel = reliability_bins(preds, labels, bins)?;
    Ok(MetricsReport {
        tag,
        n: preds.len(),
        bins,
        ece: ece(&rel)?,
        brier: brier(preds, labels)?,
        auc: auc(auc_scores, labels)?,
        f1_macro: f1_macro(preds, labels, 0.5)?,
    })
}
