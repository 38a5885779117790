use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use super::{CliError, CliResult};
use crate::ballint::DEFAULT_NODES;
use crate::divergence::DivergenceSpec;
use crate::experiments::PerSample;

#[derive(Debug, Parser)]
#[command(name = "gmsp", version, about = "Generalized maximum spacing estimation for multivariate observations")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct GlobalArgs {
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "GMSP_THREADS")]
    pub threads: Option<usize>,
    /// Directory for reports and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// File of `key = value` lines supplying defaults for flags not given.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a sample from a model and write it as CSV.
    Sample(SampleArgs),
    /// Fit a model to a data file.
    Estimate(EstimateArgs),
    /// Tabulate asymptotic variance constants.
    Constants(ConstantsArgs),
    /// Monte Carlo estimates of the score second moment.
    LambdaScan(LambdaScanArgs),
    /// Replicated fits checking the limiting normal law.
    Normality(NormalityArgs),
    /// Empirical process covariance checks.
    Empproc(EmpprocArgs),
    /// Re-run a recorded manifest and compare output digests.
    Replay(ReplayArgs),
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct SampleArgs {
    #[arg(long, default_value = "normal")]
    pub family: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub theta: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Output file; `-` writes to standard output.
    #[arg(long, default_value = "sample.csv")]
    pub out: PathBuf,
    #[arg(long)]
    pub header: bool,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct EstimateArgs {
    /// CSV of observations, one per line; `-` reads standard input.
    pub data: PathBuf,
    #[arg(long, default_value = "normal")]
    pub family: String,
    /// Starting point; required with `--free` to fix the other parameters.
    #[arg(long, value_delimiter = ',')]
    pub theta0_init: Option<Vec<f64>>,
    #[arg(long, default_value = "h1")]
    pub h: DivergenceSpec,
    /// Names of parameters to optimise; the rest stay at `--theta0-init`.
    #[arg(long, value_delimiter = ',')]
    pub free: Vec<String>,
    /// The first line of the data file is a header.
    #[arg(long)]
    pub header: bool,
    #[arg(long, default_value_t = 5)]
    pub starts: usize,
    #[arg(long, default_value_t = DEFAULT_NODES)]
    pub quad_nodes: usize,
    #[arg(long, default_value_t = 0)]
    pub quad_seed: u64,
    /// Divergences for the subsample model check.
    #[arg(long, value_delimiter = ',')]
    pub model_check: Vec<DivergenceSpec>,
    /// Report plug-in standard errors (not available for mixtures).
    #[arg(long)]
    pub std_errors: bool,
    #[arg(long, default_value = "estimate.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ConstantsArgs {
    #[arg(long, value_delimiter = ',', default_value = super::DEFAULT_CONSTANTS_H)]
    pub h_list: Vec<DivergenceSpec>,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub dims: Vec<usize>,
    /// Output stem; `.csv` and `.json` are written.
    #[arg(long, default_value = "constants")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct LambdaScanArgs {
    #[arg(long, default_value = "mvnormal")]
    pub family: String,
    #[arg(long, value_delimiter = ',', default_value = "1,2,1,1,0.5")]
    pub theta0: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "h1,h2,h3")]
    pub h_list: Vec<DivergenceSpec>,
    #[arg(long, value_delimiter = ',', default_value = "10,30")]
    pub sqrt_n: Vec<usize>,
    /// Samples per repetition.
    #[arg(long, default_value_t = 2000)]
    pub m: usize,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
    /// Parameter index or name.
    #[arg(long, default_value = "2")]
    pub component: String,
    /// Observations per sample entering the average: `all` or `one`.
    #[arg(long, default_value = "all")]
    pub per_sample: PerSample,
    #[arg(long, default_value_t = DEFAULT_NODES)]
    pub quad_nodes: usize,
    #[arg(long, default_value_t = 0)]
    pub quad_seed: u64,
    /// Output stem for the long CSV, the table CSV and the JSON report.
    #[arg(long, default_value = "lambda_scan")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct NormalityArgs {
    #[arg(long, default_value = "normal")]
    pub family: String,
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    pub theta0: Vec<f64>,
    #[arg(long, default_value = "h1")]
    pub h: DivergenceSpec,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 500)]
    pub replicates: usize,
    #[arg(long, value_delimiter = ',', default_value = "mu")]
    pub free: Vec<String>,
    #[arg(long, default_value_t = 5)]
    pub starts: usize,
    #[arg(long, default_value_t = DEFAULT_NODES)]
    pub quad_nodes: usize,
    #[arg(long, default_value_t = 0)]
    pub quad_seed: u64,
    #[arg(long, default_value = "normality")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EmpprocMode {
    Kernel,
    Score,
    Both,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct EmpprocArgs {
    #[arg(long, value_enum, default_value = "kernel")]
    pub mode: EmpprocMode,
    #[arg(long, default_value = "mvnormal")]
    pub family: String,
    #[arg(long, value_delimiter = ',', default_value = "0,0,1,1,0")]
    pub theta0: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 2000)]
    pub replicates: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1,2,4")]
    pub t_grid: Vec<f64>,
    /// `coordinate:<axis>`, `score:<component>` or `zero`.
    #[arg(long, default_value = "coordinate:0")]
    pub weight: String,
    #[arg(long, default_value_t = 1.5)]
    pub truncation: f64,
    /// Draws used to calibrate the truncated weight.
    #[arg(long, default_value_t = 1_000_000)]
    pub calibration: usize,
    /// Divergence for the score covariance check.
    #[arg(long, default_value = "h1")]
    pub h: DivergenceSpec,
    #[arg(long, default_value_t = DEFAULT_NODES)]
    pub quad_nodes: usize,
    #[arg(long, default_value_t = 0)]
    pub quad_seed: u64,
    #[arg(long, default_value = "empproc")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    /// A `<command>.manifest.json` written by an earlier run.
    pub manifest: PathBuf,
    /// Directory for the re-run outputs (default: a `replay` folder beside the manifest).
    #[arg(long)]
    pub into: Option<PathBuf>,
}

/// Parse a `key = value` file; `#` starts a comment.
pub fn parse_config(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", i + 1)))?;
        let key = k.trim().replace(['.', '_'], "-");
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", i + 1)));
        }
        out.insert(key, v.trim().trim_matches('"').to_string());
    }
    Ok(out)
}

/// Append flags from `--config` for every key not already on the command line.
pub fn apply_config_file(argv: &[String]) -> CliResult<Vec<String>> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        if a == "--" {
            break;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else if a == "--config" {
            path = argv.get(i + 1).cloned();
        }
    }
    let Some(path) = path else { return Ok(argv.to_vec()) };
    let text = std::fs::read_to_string(&path).map_err(|source| CliError::Io { context: format!("reading config {path}"), source })?;
    let given = |key: &str| {
        let flag = format!("--{key}");
        let eq = format!("--{key}=");
        argv.iter().take_while(|a| *a != "--").any(|a| *a == flag || a.starts_with(&eq))
    };
    let mut out = argv.to_vec();
    for (key, value) in parse_config(&text)? {
        if key == "config" || given(&key) {
            continue;
        }
        match value.as_str() {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            _ => out.push(format!("--{key}={value}")),
        }
    }
    Ok(out)
}
