//! Command-line front end for `ecfkit`: argument parsing, report envelopes and
//! exit-code mapping. The commands themselves live in [`commands`] and
//! [`experiments`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ecfkit::data::write_atomic;
use serde::{Serialize, Serializer};

pub mod commands;
pub mod experiments;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or inputs, detected before or while reading them.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Library(#[from] ecfkit::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use ecfkit::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Library(e) => match e {
                E::Dimension(_) | E::InvalidArgument(_) | E::Parse { .. } | E::Role { .. } | E::Io { .. } => {
                    EXIT_USAGE
                }
                E::Infeasible { .. }
                | E::InfeasibleRow { .. }
                | E::SolverStalled { .. }
                | E::ConstantDistances
                | E::DuplicateRows(..)
                | E::CodingSearchFailed { .. } => EXIT_RUNTIME,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// `auto` or a fixed code length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthArg {
    Auto,
    Fixed(usize),
}

impl FromStr for LengthArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(LengthArg::Auto);
        }
        match s.parse::<usize>() {
            Ok(0) => Err("length must be at least 1".into()),
            Ok(l) => Ok(LengthArg::Fixed(l)),
            Err(_) => Err(format!("expected `auto` or a positive integer, got {s:?}")),
        }
    }
}

impl fmt::Display for LengthArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LengthArg::Auto => f.write_str("auto"),
            LengthArg::Fixed(l) => write!(f, "{l}"),
        }
    }
}

impl Serialize for LengthArg {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LengthArg::Auto => s.serialize_str("auto"),
            LengthArg::Fixed(l) => s.serialize_u64(*l as u64),
        }
    }
}

impl From<LengthArg> for ecfkit::design::LengthChoice {
    fn from(l: LengthArg) -> Self {
        match l {
            LengthArg::Auto => Self::Auto,
            LengthArg::Fixed(n) => Self::Fixed(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyArg {
    Hard,
    Easy,
}

impl From<PolicyArg> for ecfkit::design::AllocationPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Hard => Self::Hard,
            PolicyArg::Easy => Self::Easy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodingArg {
    Hamming,
    Lw,
}

impl From<DecodingArg> for ecfkit::classify::Decoding {
    fn from(d: DecodingArg) -> Self {
        match d {
            DecodingArg::Hamming => Self::Hamming,
            DecodingArg::Lw => Self::LossWeighted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderArg {
    Cyclic,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceArg {
    File,
    EcfH,
    EcfE,
    Ova,
    Dense,
    Rand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Ova,
    Dense,
    Rand,
}

#[derive(Debug, Parser)]
#[command(name = "ecfkit", version, about = "Error-correcting factorization of ECOC design matrices")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a design matrix from a labeled dataset.
    Design(DesignArgs),
    /// Factorize a design matrix into a coding matrix.
    Factorize(FactorizeArgs),
    /// Distance and correction analysis of a coding matrix.
    Analyze(AnalyzeArgs),
    /// Cross-validated accuracy of a coding design.
    Evaluate(EvaluateArgs),
    /// Recovery of random binary Gramians, objective per cycle.
    ExperimentConvergence(ConvergenceArgs),
    /// Cyclic versus random row order on one design.
    ExperimentOrder(OrderArgs),
    /// Write a baseline coding matrix (one-vs-all, dense random, random with fixed distance).
    Baseline(BaselineArgs),
    /// Write the synthetic toy dataset as CSV.
    Toy(ToyArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DesignArgs {
    /// Dataset CSV (features, then the label).
    #[arg(long)]
    pub input: PathBuf,
    /// Zero-based label column; the last column by default.
    #[arg(long)]
    pub label_column: Option<usize>,
    #[arg(long, value_enum, default_value_t = PolicyArg::Hard)]
    pub policy: PolicyArg,
    #[arg(long, default_value = "auto")]
    pub length: LengthArg,
    /// Where to write the design matrix.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON report path; stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FactorizeArgs {
    #[arg(long)]
    pub design: PathBuf,
    /// Code length; defaults to the design's diagonal. `auto` uses its numerical rank.
    #[arg(long)]
    pub length: Option<LengthArg>,
    #[arg(long, default_value_t = 1)]
    pub min_distance: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = OrderArg::Cyclic)]
    pub order: OrderArg,
    #[arg(long, default_value_t = 100)]
    pub max_cycles: usize,
    /// Where to write the coding matrix.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub coding: PathBuf,
    /// Also validate against the uniform policy for this distance.
    #[arg(long)]
    pub min_distance: Option<usize>,
    /// Optional CSV of the Hamming distance profile.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub label_column: Option<usize>,
    #[arg(long, value_enum, default_value_t = SourceArg::EcfH)]
    pub source: SourceArg,
    /// Coding matrix for `--source file`.
    #[arg(long)]
    pub coding: Option<PathBuf>,
    /// One or more distances (comma separated) for ecf-h, ecf-e and rand.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub min_distance: Vec<usize>,
    #[arg(long, default_value = "auto")]
    pub length: LengthArg,
    #[arg(long, value_enum, default_value_t = DecodingArg::Hamming)]
    pub decoding: DecodingArg,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Candidate pool for `--source dense`.
    #[arg(long, default_value_t = 1000)]
    pub pool: usize,
    /// Draws allowed for `--source rand`.
    #[arg(long, default_value_t = 10_000)]
    pub attempts: usize,
    /// Accuracy versus number of dichotomies, one row per distance.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-sample predictions for audit.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ConvergenceArgs {
    /// Class counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "10,50")]
    pub classes: Vec<usize>,
    /// Runs per class count.
    #[arg(long, default_value_t = 10)]
    pub seeds: usize,
    /// First seed; run `r` uses `seed + r`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 15)]
    pub cycles: usize,
    #[arg(long, default_value_t = 1)]
    pub min_distance: usize,
    /// Objective reported as recovered at or below this value.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Curve CSV: k, cycle, mean, std.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for the per-run coding matrices.
    #[arg(long)]
    pub codings: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OrderArgs {
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub min_distance: usize,
    /// Full passes per trial; every trial runs all of them.
    #[arg(long, default_value_t = 20)]
    pub cycles: usize,
    /// Directory receiving `order_cyclic.csv` and `order_random.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub kind: BaselineKind,
    #[arg(long)]
    pub classes: usize,
    #[arg(long, default_value_t = 1000)]
    pub pool: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Code length for `rand`.
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub min_distance: usize,
    #[arg(long, default_value_t = 10_000)]
    pub attempts: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ToyArgs {
    #[arg(long, default_value_t = 14)]
    pub classes: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0.3)]
    pub spread: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Every JSON report: the command, its resolved configuration, the
/// command-specific body and the elapsed wall time.
#[derive(Serialize)]
struct Envelope<'a, C: Serialize, B: Serialize> {
    command: &'a str,
    config: &'a C,
    #[serde(flatten)]
    body: &'a B,
    wall_time_ms: u128,
}

pub(crate) fn emit_report<C: Serialize, B: Serialize>(
    command: &str,
    config: &C,
    body: &B,
    started: Instant,
    path: Option<&Path>,
) -> CliResult<()> {
    let env = Envelope {
        command,
        config,
        body,
        wall_time_ms: started.elapsed().as_millis(),
    };
    let mut text = serde_json::to_string_pretty(&env).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    match path {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Serializes `rows` under `header` and writes the file atomically.
pub(crate) fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

/// Full-precision text for CSV cells.
pub(crate) fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Design(a) => commands::design(&a),
        Command::Factorize(a) => commands::factorize(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::ExperimentConvergence(a) => experiments::convergence(&a),
        Command::ExperimentOrder(a) => experiments::order(&a),
        Command::Baseline(a) => commands::baseline(&a),
        Command::Toy(a) => commands::toy(&a),
    }
}

/// Applies `ECFKIT_THREADS` to the global rayon pool.
pub fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("ECFKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| usage(format!("ECFKIT_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}
