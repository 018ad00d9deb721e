//! Benchmark harness around the `disir` estimators.
//!
//! Four commands, each a pure function of `(config, seed)`:
//! `bias-bench` draws gradient estimates from the ELBO/IWAE baselines and
//! the coupled estimators and compares them against the exact PPCA oracle
//! gradient; `meeting-times` collects meeting-time distributions across
//! kernels and K values; `toy-trace` emits qualitative chain traces on a
//! bimodal 1-D target; `fit-ppca` runs maximum-likelihood training with
//! unbiased gradients and logs the exact log-likelihood per epoch.

pub mod config;
pub mod pipelines;
pub mod summary;
pub mod table;

use std::path::Path;

use config::RunConfig;
use table::Metadata;

/// Process exit codes: 0 success, 2 config error, 3 capped-fraction breach,
/// 4 numerical failure.
#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("capped-run fraction {fraction} exceeds threshold {threshold}")]
    CappedBreach { fraction: f64, threshold: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::CappedBreach { .. } => 3,
            BenchError::Numerical(_) => 4,
            BenchError::Io(_) => 1,
        }
    }
}

impl From<disir::Error> for BenchError {
    fn from(e: disir::Error) -> Self {
        BenchError::Numerical(e.to_string())
    }
}

/// The CLI subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    BiasBench,
    MeetingTimes,
    ToyTrace,
    FitPpca,
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::BiasBench => "bias-bench",
            CommandKind::MeetingTimes => "meeting-times",
            CommandKind::ToyTrace => "toy-trace",
            CommandKind::FitPpca => "fit-ppca",
        }
    }
}

/// Runs one command inside a rayon pool of the configured size and writes
/// its outputs under `out_dir`. Returns the summary JSON.
pub fn run_command(
    kind: CommandKind,
    config: &RunConfig,
    out_dir: &Path,
) -> Result<serde_json::Value, BenchError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| BenchError::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_command_inner(kind, config, out_dir))
}

fn run_command_inner(
    kind: CommandKind,
    config: &RunConfig,
    out_dir: &Path,
) -> Result<serde_json::Value, BenchError> {
    std::fs::create_dir_all(out_dir)?;
    let meta = Metadata::new(kind.name(), config.seed, config.sha256());
    match kind {
        CommandKind::BiasBench => pipelines::bias::run_and_write(config, out_dir, &meta),
        CommandKind::MeetingTimes => pipelines::meeting::run_and_write(config, out_dir, &meta),
        CommandKind::ToyTrace => pipelines::toy::run_and_write(config, out_dir, &meta),
        CommandKind::FitPpca => pipelines::fit::run_and_write(config, out_dir, &meta),
    }
}
