//! `icr`: compatibility checks, joint synthesis, ensembles and baseline
//! comparisons for conditionally specified models stored as JSON.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use icr::IcrError;

#[derive(Debug, Parser)]
#[command(name = "icr", version, about = "Iterative conditional replacement for conditionally specified models")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Diagnostics written to stderr at this level and above.
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    pub log_level: LogLevel,
    /// Independent runs executed at once; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Seed for random starts and Gibbs chains.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LogLevel {
    Off,
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl From<LogLevel> for log::LevelFilter {
    fn from(l: LogLevel) -> Self {
        match l {
            LogLevel::Off => log::LevelFilter::Off,
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
            LogLevel::Trace => log::LevelFilter::Trace,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a model and report its structure; optionally check a plan.
    Validate(ValidateArgs),
    /// Print permissible updating cycles as JSON lines.
    Cycles(CyclesArgs),
    /// Run ICR along one or more cycles.
    Run(RunArgs),
    /// Execute a synthesis plan.
    Plan(PlanArgs),
    /// Optimal mixture of the stationary joints of every cycle.
    Ensemble(EnsembleArgs),
    /// Compare ICR, the power method and Gibbs sampling.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub model: PathBuf,
    /// Synthesis plan to check for sufficiency.
    #[arg(long)]
    pub plan: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CyclesArgs {
    pub model: PathBuf,
    /// Stop after this many cycles.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(usize))]
    pub limit: usize,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub model: PathBuf,
    /// Comma-separated block ids in update order.
    #[arg(long, value_delimiter = ',', conflicts_with = "all_cycles")]
    pub cycle: Option<Vec<String>>,
    /// Run every permissible cycle instead of at most 24.
    #[arg(long)]
    pub all_cycles: bool,
    /// Tolerance for both the convergence and the compatibility criterion.
    #[arg(long, default_value_t = 1e-10, value_parser = positive)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_cycles: u64,
    /// `uniform`, `last-block`, `random` (uses --seed) or a distribution file.
    #[arg(long, default_value = "uniform")]
    pub init: String,
    /// Trace CSV path; defaults to `trace.csv` in the output directory.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Directory for stationary distributions and the default trace.
    #[arg(long, default_value = "icr-out")]
    pub out: PathBuf,
    /// Exit with status 4 if any run is found incompatible.
    #[arg(long)]
    pub expect_compatible: bool,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    pub model: PathBuf,
    pub plan: PathBuf,
    /// Directory for every intermediate distribution.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Default tolerance for ICR phases.
    #[arg(long, default_value_t = 1e-10, value_parser = positive)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    pub model: PathBuf,
    #[arg(long, default_value = "kl", value_parser = ["kl", "x2", "f2"])]
    pub measure: String,
    /// Cycles to run at most.
    #[arg(long, default_value_t = 24)]
    pub limit: usize,
    #[arg(long, default_value_t = 1e-10, value_parser = positive)]
    pub tol: f64,
    /// Result JSON path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub model: PathBuf,
    /// Comma-separated block ids; the first permissible cycle when absent.
    #[arg(long, value_delimiter = ',')]
    pub cycle: Option<Vec<String>>,
    /// Gibbs draws per checkpoint.
    #[arg(long, default_value_t = 1_000_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub gs_n: u64,
    /// Cumulative checkpoints per chain.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub gs_batches: u64,
    #[arg(long, default_value_t = 100_000)]
    pub gs_burnin: u64,
    /// Independent Gibbs chains.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: u64,
    /// Reference joint; the ICR stationary joint when absent.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-10, value_parser = positive)]
    pub tol: f64,
    /// Report CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
        Ok(_) => Err("must be a positive finite number".into()),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Icr(#[from] IcrError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Incompatible(String),
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Icr(IcrError::NonConvergence { .. } | IcrError::NotConverged) => 3,
            CliError::Icr(IcrError::Phase { source, .. })
                if matches!(**source, IcrError::NonConvergence { .. } | IcrError::NotConverged) =>
            {
                3
            }
            CliError::Icr(_) | CliError::Io { .. } => 2,
            CliError::Incompatible(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self.code() {
            1 => "usage",
            3 => "non-convergence",
            4 => "incompatible",
            _ => "validation",
        }
    }
}

fn diagnostic(code: u8, kind: &str, message: &str) {
    let line = serde_json::json!({ "code": code, "kind": kind, "message": message });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            diagnostic(1, "usage", first);
            return ExitCode::from(1);
        }
    };
    env_logger::Builder::new().filter_level(cli.global.log_level.into()).format_timestamp(None).init();

    let result = match &cli.command {
        Command::Validate(a) => commands::validate(&cli.global, a),
        Command::Cycles(a) => commands::cycles(&cli.global, a),
        Command::Run(a) => commands::run(&cli.global, a),
        Command::Plan(a) => commands::plan(&cli.global, a),
        Command::Ensemble(a) => commands::ensemble(&cli.global, a),
        Command::Bench(a) => commands::bench(&cli.global, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.code();
            diagnostic(code, e.kind(), &e.to_string().replace('\n', " "));
            ExitCode::from(code)
        }
    }
}
