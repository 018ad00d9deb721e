use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use disir_bench::config::RunConfig;
use disir_bench::{run_command, BenchError, CommandKind};

/// Benchmark harness for coupled importance-sampling MCMC gradient
/// estimators on probabilistic PCA.
#[derive(Parser)]
#[command(name = "disir-bench", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Parser)]
struct CommonArgs {
    /// Path to the TOML config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (overrides the config; 0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Signed-error benchmark of the gradient estimators against the exact
    /// PPCA oracle.
    BiasBench(CommonArgs),
    /// Meeting-time distributions across kernels and K values.
    MeetingTimes(CommonArgs),
    /// Qualitative kernel trace on the 1-D bimodal toy target.
    ToyTrace(CommonArgs),
    /// Maximum-likelihood PPCA fitting with unbiased gradients.
    FitPpca(CommonArgs),
}

impl Command {
    fn split(self) -> (CommandKind, CommonArgs) {
        match self {
            Command::BiasBench(a) => (CommandKind::BiasBench, a),
            Command::MeetingTimes(a) => (CommandKind::MeetingTimes, a),
            Command::ToyTrace(a) => (CommandKind::ToyTrace, a),
            Command::FitPpca(a) => (CommandKind::FitPpca, a),
        }
    }
}

fn run(kind: CommandKind, args: CommonArgs) -> Result<(), BenchError> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(threads) = args.threads {
        config.threads = threads;
    }
    let out_dir = args.out.unwrap_or_else(|| PathBuf::from(&config.out_dir));

    let summary = run_command(kind, &config, &out_dir)?;
    println!(
        "{} done: seed={} out={} config_sha256={}",
        kind.name(),
        config.seed,
        out_dir.display(),
        config.sha256()
    );
    if let Some(obj) = summary.as_object() {
        for key in ["gap_fraction", "ks_distance", "replicates", "epochs"] {
            if let Some(v) = obj.get(key) {
                println!("  {key} = {v}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = cli.command.split();
    match run(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
