use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use venncal_core::data::{self, read_records, write_records};
use venncal_core::metrics::{evaluate_all, reliability_bins, MetricsReport, RunTag};
use venncal_core::numfmt::g17;
use venncal_core::temperature::{fit_temperature, FitOptions};
use venncal_core::{
    synth, IvapCalibrator, LogitRecord, ScoreKind, ScoredExample, SplitSpec, SynthConfig,
    TemperatureModel,
};
use venncal_scorer::journal::{journal_path, write_failures};
use venncal_scorer::{fetch_dataset, MissingTokenPolicy, Scorer, ScorerConfig};

use crate::failure::{CmdResult, Failure};
use crate::svg::reliability_svg;
use crate::{
    Cli, EvalArgs, FetchArgs, FitArgs, FitMethod, Method, PredictArgs, ReliabilityArgs, SplitArgs,
    SweepArgs, SynthArgs,
};

/// Model file written by `fit`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ModelFile {
    /// IVAP fit on scores produced by the `(kind, tau)` transform.
    Ivap {
        kind: ScoreKind,
        tau: f64,
        calibrator: IvapCalibrator,
    },
    Temperature {
        model: TemperatureModel,
    },
}

impl ModelFile {
    fn kind(&self) -> ScoreKind {
        match self {
            ModelFile::Ivap { kind, .. } => *kind,
            ModelFile::Temperature { model } => model.kind,
        }
    }
}

fn load_records(cli: &Cli, path: &Path) -> CmdResult<Vec<LogitRecord>> {
    let records = read_records(path, cli.format)?;
    if records.is_empty() {
        return Err(Failure::usage(format!(
            "{} holds no records",
            path.display()
        )));
    }
    Ok(records)
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text)
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

fn require_full_logits(records: &[LogitRecord], kind: ScoreKind) -> CmdResult {
    if kind == ScoreKind::SoftmaxK {
        if let Some(r) = records.iter().find(|r| r.full_logits.is_none()) {
            return Err(Failure::usage(format!(
                "softmaxK needs full_logits, missing on record '{}'",
                r.id
            )));
        }
    }
    Ok(())
}

fn labels_of(examples: &[ScoredExample]) -> Vec<u8> {
    examples.iter().map(|e| e.label).collect()
}

pub fn synth(cli: &Cli, a: &SynthArgs) -> CmdResult {
    let out = cli.out()?;
    let mut cfg = SynthConfig {
        n: a.n,
        prior: a.prior,
        mu: a.mu,
        sigma: a.sigma,
        seed: cli.seed,
    };
    if let Some(tau) = a.tau_star {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Failure::usage(format!(
                "--tau-star must be positive, got {tau}"
            )));
        }
        cfg.sigma = (2.0 * tau * cfg.mu).sqrt();
    }
    let records = synth::generate(&cfg)?;
    write_records(&records, out)?;
    log::info!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}

fn parse_answer_tokens(spec: &str) -> CmdResult<(String, String)> {
    match spec
        .split(',')
        .map(str::trim)
        .collect::<Vec<_>>()
        .as_slice()
    {
        [pos, neg] if !pos.is_empty() && !neg.is_empty() => Ok((pos.to_string(), neg.to_string())),
        _ => Err(Failure::usage(format!(
            "--answer-tokens expects 'pos,neg', got '{spec}'"
        ))),
    }
}

pub fn fetch(cli: &Cli, a: &FetchArgs) -> CmdResult {
    let out = cli.out()?;
    let (pos, neg) = parse_answer_tokens(&a.answer_tokens)?;
    let mut config = ScorerConfig::new(&a.base_url, &a.model, &pos, &neg)?;
    config.auth_token_env = a.auth_env.clone();
    config.top_logprobs = a.top_logprobs;
    config.max_in_flight = a.max_in_flight;
    config.max_retries = a.max_retries;
    config.missing_token = a.missing_token.parse::<MissingTokenPolicy>()?;
    config.timeout = Duration::try_from_secs_f64(a.timeout)
        .map_err(|_| Failure::usage(format!("invalid --timeout {}", a.timeout)))?;
    let scorer = Scorer::new(config)?;

    let template = a.dataset.template();
    template.require(a.dataset.fields())?;
    let examples = a.dataset.read(&a.input)?;

    let journal = journal_path(out);
    if !a.resume && journal.exists() {
        fs::remove_file(&journal)
            .map_err(|e| Failure::runtime(format!("cannot reset {}: {e}", journal.display())))?;
    }
    let summary = fetch_dataset(&scorer, &examples, &template, out)?;
    eprintln!(
        "fetched {} records ({} requested, {} resumed, {} failed)",
        summary.records.len(),
        summary.requested,
        summary.resumed,
        summary.failed.len()
    );
    if !summary.failed.is_empty() {
        let mut failed_path = out.as_os_str().to_owned();
        failed_path.push(".failed");
        let failed_path = Path::new(&failed_path);
        write_failures(&summary.failed, failed_path)?;
        log::warn!(
            "{} examples failed; see {} and rerun with --resume",
            summary.failed.len(),
            failed_path.display()
        );
    }
    Ok(())
}

pub fn split(cli: &Cli, a: &SplitArgs) -> CmdResult {
    let out = cli.out()?;
    let records = load_records(cli, &a.records)?;
    let spec = SplitSpec::new(cli.seed, a.calibration_fraction)?;
    let (cal, test) = data::split(&records, spec)?;
    fs::create_dir_all(out)
        .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", out.display())))?;
    write_records(&cal, out.join("calibration.jsonl"))?;
    write_records(&test, out.join("test.jsonl"))?;
    eprintln!("calibration: {}, test: {}", cal.len(), test.len());
    Ok(())
}

pub fn fit(cli: &Cli, a: &FitArgs) -> CmdResult {
    let out = cli.out()?;
    let records = load_records(cli, &a.records)?;
    require_full_logits(&records, a.kind)?;
    let model = match a.method {
        FitMethod::Ivap => {
            let scored = data::transform_scores(&records, a.kind, a.tau)?;
            ModelFile::Ivap {
                kind: a.kind,
                tau: a.tau,
                calibrator: IvapCalibrator::fit(&scored)?,
            }
        }
        FitMethod::Temperature => {
            let options = FitOptions::with_bounds(a.tau_min, a.tau_max);
            ModelFile::Temperature {
                model: fit_temperature(&records, a.kind, options)?,
            }
        }
    };
    let text = serde_json::to_string_pretty(&model).map_err(venncal_core::Error::from)?;
    write_text(out, &(text + "\n"))
}

fn load_model(path: &Path) -> CmdResult<ModelFile> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::runtime(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::usage(format!("{} is not a model file: {e}", path.display())))
}

pub fn predict(cli: &Cli, a: &PredictArgs) -> CmdResult {
    let out = cli.out()?;
    let model = load_model(&a.model)?;
    if let Some(kind) = a.kind {
        if kind != model.kind() {
            return Err(Failure::usage(format!(
                "model was fit on {} scores, not {kind}",
                model.kind()
            )));
        }
    }
    let records = load_records(cli, &a.records)?;
    require_full_logits(&records, model.kind())?;
    let mut w = csv::Writer::from_path(out)?;
    match &model {
        ModelFile::Ivap {
            kind,
            tau,
            calibrator,
        } => {
            let scored = data::transform_scores(&records, *kind, *tau)?;
            let scores: Vec<f64> = scored.iter().map(|e| e.score).collect();
            w.write_record(["id", "p0", "p1", "p"])?;
            for (r, (mp, p)) in records.iter().zip(calibrator.predict_batch(&scores)?) {
                w.write_record([r.id.as_str(), &g17(mp.p0), &g17(mp.p1), &g17(p)])?;
            }
        }
        ModelFile::Temperature { model } => {
            w.write_record(["id", "p"])?;
            for (r, e) in records.iter().zip(model.apply(&records)?) {
                w.write_record([r.id.as_str(), &g17(e.score)])?;
            }
        }
    }
    w.flush()
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", out.display())))
}

pub fn eval(cli: &Cli, a: &EvalArgs) -> CmdResult {
    let out = cli.out()?;
    let mut rdr = csv::Reader::from_path(&a.predictions)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(id_col), Some(p_col)) = (col("id"), col("p")) else {
        return Err(Failure::usage(format!(
            "{} needs 'id' and 'p' columns",
            a.predictions.display()
        )));
    };
    let method = a.method.clone().unwrap_or_else(|| {
        if col("p0").is_some() {
            "ivap"
        } else {
            "temperature"
        }
        .to_string()
    });

    let labels: HashMap<String, u8> = read_records(&a.labels, cli.format)?
        .into_iter()
        .map(|r| (r.id, r.label))
        .collect();
    let (mut preds, mut ys) = (Vec::new(), Vec::new());
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let id = row.get(id_col).unwrap_or_default();
        let p: f64 = row
            .get(p_col)
            .and_then(|s| s.trim().parse().ok())
            .filter(|p: &f64| (0.0..=1.0).contains(p))
            .ok_or_else(|| {
                Failure::usage(format!(
                    "{}:{line}: bad probability",
                    a.predictions.display()
                ))
            })?;
        let label = labels.get(id).ok_or_else(|| {
            Failure::usage(format!(
                "{}:{line}: no label for id '{id}'",
                a.predictions.display()
            ))
        })?;
        preds.push(p);
        ys.push(*label);
    }
    if preds.is_empty() {
        return Err(Failure::usage(format!(
            "{} has no predictions",
            a.predictions.display()
        )));
    }
    let mut tag = RunTag::new(method);
    if let Some(pair) = &a.token_pair {
        tag = tag.with_token_pair(pair.clone());
    }
    let report = evaluate_all(&preds, &preds, &ys, a.bins, tag)?;
    data::write_report(&report, out)?;
    Ok(())
}

/// Predictions of a calibrated method on the test split.
fn calibrated_predictions(
    method: Method,
    cal: &[LogitRecord],
    test: &[LogitRecord],
    tau: f64,
) -> CmdResult<(Vec<f64>, Vec<u8>, f64)> {
    match method {
        Method::Tempscaled => {
            let model = fit_temperature(cal, ScoreKind::Softmax2, FitOptions::default())?;
            let scored = model.apply(test)?;
            let preds = scored.iter().map(|e| e.score).collect();
            Ok((preds, labels_of(&scored), model.tau_hat))
        }
        _ => {
            let calibrator =
                IvapCalibrator::fit(&data::transform_scores(cal, method.kind(), tau)?)?;
            let scored = data::transform_scores(test, method.kind(), tau)?;
            let scores: Vec<f64> = scored.iter().map(|e| e.score).collect();
            let preds = calibrator
                .predict_batch(&scores)?
                .into_iter()
                .map(|(_, p)| p)
                .collect();
            Ok((preds, labels_of(&scored), tau))
        }
    }
}

fn sweep_row(
    w: &mut csv::Writer<fs::File>,
    tau: f64,
    method: Method,
    preds: &[f64],
    labels: &[u8],
    bins: usize,
) -> CmdResult {
    let r: MetricsReport = evaluate_all(preds, preds, labels, bins, RunTag::new(method.name()))?;
    w.write_record([
        g17(tau),
        method.name().to_string(),
        r.n.to_string(),
        g17(r.ece),
        g17(r.brier),
        g17(r.auc),
        g17(r.f1_macro),
    ])?;
    Ok(())
}

pub fn sweep(cli: &Cli, a: &SweepArgs) -> CmdResult {
    let out = cli.out()?;
    if a.methods.is_empty() {
        return Err(Failure::usage("--methods is empty"));
    }
    let records = load_records(cli, &a.records)?;
    for m in &a.methods {
        require_full_logits(&records, m.kind())?;
    }
    let (cal, test) = data::split(&records, SplitSpec::new(cli.seed, a.calibration_fraction)?)?;

    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["tau", "method", "n", "ece", "brier", "auc", "f1_macro"])?;
    for &tau in &a.tau_grid.0 {
        for &method in a.methods.iter().filter(|m| **m != Method::Tempscaled) {
            let (preds, labels) = if method.is_calibrated() {
                let (p, l, _) = calibrated_predictions(method, &cal, &test, tau)?;
                (p, l)
            } else {
                let scored = data::transform_scores(&test, method.kind(), tau)?;
                (scored.iter().map(|e| e.score).collect(), labels_of(&scored))
            };
            sweep_row(&mut w, tau, method, &preds, &labels, a.bins)?;
        }
    }
    if a.methods.contains(&Method::Tempscaled) {
        let (preds, labels, tau_hat) =
            calibrated_predictions(Method::Tempscaled, &cal, &test, 1.0)?;
        sweep_row(&mut w, tau_hat, Method::Tempscaled, &preds, &labels, a.bins)?;
    }
    w.flush()
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", out.display())))
}

pub fn reliability(cli: &Cli, a: &ReliabilityArgs) -> CmdResult {
    let out = cli.out()?;
    let records = load_records(cli, &a.records)?;
    require_full_logits(&records, a.method.kind())?;
    let (preds, labels, tau) = if a.method.is_calibrated() {
        let (cal, test) = data::split(&records, SplitSpec::new(cli.seed, a.calibration_fraction)?)?;
        calibrated_predictions(a.method, &cal, &test, a.tau)?
    } else {
        let scored = data::transform_scores(&records, a.method.kind(), a.tau)?;
        (
            scored.iter().map(|e| e.score).collect(),
            labels_of(&scored),
            a.tau,
        )
    };
    let bins = reliability_bins(&preds, &labels, a.bins)?;
    bins.write_csv(out)?;
    if let Some(svg) = &a.svg {
        let title = format!("{} at tau = {}", a.method.name(), g17(tau));
        write_text(svg, &reliability_svg(&bins, &title))?;
    }
    Ok(())
}
