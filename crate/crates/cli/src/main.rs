use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

use commands::Failure;

#[derive(Parser, Debug)]
#[command(
    name = "pfrecon",
    version,
    about = "Phase-field tumour growth: forward runs and initial-state reconstruction"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Configuration file; repeat to layer files, later keys win.
    #[arg(long = "config", global = true, value_name = "PATH")]
    pub config: Vec<PathBuf>,
    /// Noise seed, overriding the configured one.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Scenario overlays run side by side, at most N at a time.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    pub jobs: usize,
    /// Field dump stride: days for trajectories, iterations for
    /// reconstructions. 0 disables dumps.
    #[arg(long = "dump-stride", global = true, value_name = "K")]
    pub dump_stride: Option<usize>,
    /// Scenario overlay file; each runs with its own output subdirectory.
    #[arg(long = "scenario", global = true, value_name = "PATH")]
    pub scenarios: Vec<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Reference simulation on the fine mesh and the terminal measurement.
    GroundTruth,
    /// Reconstruct the initial phase field from a terminal measurement.
    Reconstruct(commands::ReconstructArgs),
    /// Compare two field files.
    Metrics {
        reference: PathBuf,
        reconstruction: PathBuf,
    },
    /// Add seeded measurement noise to a field file.
    Noise { input: PathBuf },
    /// Plain forward solve on the working mesh.
    Forward(commands::ForwardArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GroundTruth => commands::scenarios(&cli.global, commands::ground_truth),
        Command::Reconstruct(a) => {
            commands::scenarios(&cli.global, |g, c| commands::reconstruct(g, c, a))
        }
        Command::Forward(a) => commands::scenarios(&cli.global, |g, c| commands::forward(g, c, a)),
        Command::Metrics {
            reference,
            reconstruction,
        } => commands::metrics(&cli.global, reference, reconstruction),
        Command::Noise { input } => commands::noise(&cli.global, input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
