//! `venncal`: calibrate binary LLM answers with Venn-Abers predictors.

mod commands;
mod failure;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use venncal_core::data::RecordFormat;
use venncal_core::ScoreKind;

use failure::{CmdResult, Failure};

#[derive(Parser, Debug)]
#[command(
    name = "venncal",
    version,
    about = "Calibrate binary LLM answers from answer-token logits"
)]
pub struct Cli {
    /// Seed for synthesis and splitting.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Format of input record files (jsonl or csv).
    #[arg(long, global = true, default_value = "jsonl")]
    pub format: RecordFormat,

    /// Output file (a directory for `split`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic records with a known posterior.
    Synth(SynthArgs),
    /// Score a dataset against a completions endpoint.
    Fetch(FetchArgs),
    /// Split records into calibration.jsonl and test.jsonl.
    Split(SplitArgs),
    /// Fit an IVAP or temperature model on calibration records.
    Fit(FitArgs),
    /// Apply a fitted model to records.
    Predict(PredictArgs),
    /// Score a prediction CSV against record labels.
    Eval(EvalArgs),
    /// Metrics for each method across a temperature grid.
    Sweep(SweepArgs),
    /// Reliability bins as CSV and optionally SVG.
    Reliability(ReliabilityArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub prior: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 1.0, conflicts_with = "tau_star")]
    pub sigma: f64,
    /// Set sigma so that softmax-2 is calibrated at this temperature.
    #[arg(long)]
    pub tau_star: Option<f64>,
}

#[derive(Args, Debug)]
pub struct FetchArgs {
    #[arg(long, value_parser = parse_dataset)]
    pub dataset: venncal_scorer::DatasetKind,
    /// JSONL dataset file.
    #[arg(long)]
    pub input: PathBuf,
    /// API root; requests go to `<base-url>/completions`.
    #[arg(long)]
    pub base_url: String,
    #[arg(long)]
    pub model: String,
    /// Positive and negative answer tokens; a leading `_` means start of word.
    #[arg(long, default_value = "_Yes,_No")]
    pub answer_tokens: String,
    /// Environment variable holding the API token.
    #[arg(long, default_value = "VENNCAL_API_TOKEN")]
    pub auth_env: String,
    #[arg(long, default_value_t = 20)]
    pub top_logprobs: usize,
    #[arg(long, default_value_t = 4)]
    pub max_in_flight: usize,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub timeout: f64,
    #[arg(long, default_value_t = 3)]
    pub max_retries: u32,
    /// `fill` (-1e4), a number to fill with, or `error`.
    #[arg(long, default_value = "fill")]
    pub missing_token: String,
    /// Keep the existing journal and skip ids it already holds.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    pub records: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub calibration_fraction: f64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitMethod {
    Ivap,
    Temperature,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Calibration records.
    pub records: PathBuf,
    #[arg(long, value_enum)]
    pub method: FitMethod,
    #[arg(long, default_value = "softmax2", value_parser = parse_kind)]
    pub kind: ScoreKind,
    /// Temperature of the score transform fed to IVAP.
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.01)]
    pub tau_min: f64,
    #[arg(long, default_value_t = 1000.0)]
    pub tau_max: f64,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    pub records: PathBuf,
    /// Model file written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Expected score kind; rejected if the model was fit on another.
    #[arg(long, value_parser = parse_kind)]
    pub kind: Option<ScoreKind>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Prediction CSV with `id` and `p` columns.
    pub predictions: PathBuf,
    /// Records supplying the labels.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = venncal_core::metrics::DEFAULT_BINS)]
    pub bins: usize,
    /// Method name for the report; guessed from the CSV columns if absent.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub token_pair: Option<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Softmax2,
    #[value(name = "softmaxK")]
    SoftmaxK,
    Ivap2,
    #[value(name = "ivapK")]
    IvapK,
    Tempscaled,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Softmax2 => "softmax2",
            Method::SoftmaxK => "softmaxK",
            Method::Ivap2 => "ivap2",
            Method::IvapK => "ivapK",
            Method::Tempscaled => "tempscaled",
        }
    }

    pub fn kind(self) -> ScoreKind {
        match self {
            Method::SoftmaxK | Method::IvapK => ScoreKind::SoftmaxK,
            _ => ScoreKind::Softmax2,
        }
    }

    pub fn is_calibrated(self) -> bool {
        matches!(self, Method::Ivap2 | Method::IvapK | Method::Tempscaled)
    }
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    pub records: PathBuf,
    /// `lo:hi:steps`, log-spaced and inclusive.
    #[arg(long, default_value = "1:100:21", value_parser = parse_tau_grid)]
    pub tau_grid: TauGrid,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "softmax2,ivap2,tempscaled"
    )]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 0.2)]
    pub calibration_fraction: f64,
    #[arg(long, default_value_t = venncal_core::metrics::DEFAULT_BINS)]
    pub bins: usize,
}

#[derive(Args, Debug)]
pub struct ReliabilityArgs {
    pub records: PathBuf,
    #[arg(long, value_enum, default_value = "softmax2")]
    pub method: Method,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = venncal_core::metrics::DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, default_value_t = 0.2)]
    pub calibration_fraction: f64,
    /// Also draw the diagram here.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

fn parse_kind(s: &str) -> Result<ScoreKind, String> {
    s.parse().map_err(|e: venncal_core::Error| e.to_string())
}

fn parse_dataset(s: &str) -> Result<venncal_scorer::DatasetKind, String> {
    s.parse().map_err(|e: venncal_scorer::Error| e.to_string())
}

#[derive(Clone, Debug)]
pub struct TauGrid(pub Vec<f64>);

fn parse_tau_grid(s: &str) -> Result<TauGrid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, steps] = parts.as_slice() else {
        return Err(format!("expected lo:hi:steps, got '{s}'"));
    };
    let lo: f64 = lo
        .trim()
        .parse()
        .map_err(|_| format!("bad lower bound '{lo}'"))?;
    let hi: f64 = hi
        .trim()
        .parse()
        .map_err(|_| format!("bad upper bound '{hi}'"))?;
    let steps: usize = steps
        .trim()
        .parse()
        .map_err(|_| format!("bad step count '{steps}'"))?;
    if !(lo > 0.0 && lo.is_finite() && hi.is_finite() && hi >= lo) {
        return Err(format!("need 0 < lo <= hi, got {lo}:{hi}"));
    }
    match steps {
        0 => Err("step count must be at least 1".into()),
        1 => Ok(TauGrid(vec![lo])),
        _ if lo == hi => Err("lo == hi needs a single step".into()),
        _ => Ok(TauGrid(venncal_core::temperature::log_grid(lo, hi, steps))),
    }
}

impl Cli {
    pub fn out(&self) -> CmdResult<&PathBuf> {
        self.out
            .as_ref()
            .ok_or_else(|| Failure::usage("this command needs --out"))
    }
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Synth(a) => commands::synth(cli, a),
        Command::Fetch(a) => commands::fetch(cli, a),
        Command::Split(a) => commands::split(cli, a),
        Command::Fit(a) => commands::fit(cli, a),
        Command::Predict(a) => commands::predict(cli, a),
        Command::Eval(a) => commands::eval(cli, a),
        Command::Sweep(a) => commands::sweep(cli, a),
        Command::Reliability(a) => commands::reliability(cli, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("venncal: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
