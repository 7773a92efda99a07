//! `memshare`: train, evaluate and analyze memory-driven multi-agent teams.

mod commands;
mod config;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use memshare::Error;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_FAULT: u8 = 3;
pub const EXIT_INCOMPATIBLE: u8 = 4;

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn incompatible(message: impl Into<String>) -> Self {
        Self { code: EXIT_INCOMPATIBLE, message: message.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self { code: 1, message: format!("{}: {e}", path.display()) }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Usage(_) | Error::Json(_) => EXIT_CONFIG,
            Error::TrainingFault(_) | Error::NotReady { .. } => EXIT_FAULT,
            Error::Incompatible(_) | Error::Dimension { .. } | Error::Format { .. } => EXIT_INCOMPATIBLE,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

#[derive(Parser, Debug)]
#[command(name = "memshare", version, about = "Memory-driven multi-agent policy gradients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a team and write a run directory.
    Train(TrainArgs),
    /// Evaluate a trained run.
    Eval(EvalArgs),
    /// Evaluate with Gaussian noise added to every memory commit.
    Corrupt(CorruptArgs),
    /// Train and evaluate each memory-device ablation.
    Ablate(AblateArgs),
    /// Train and evaluate once per value of a grid axis.
    Sweep(SweepArgs),
    /// PCA heatmaps of one episode's write and read traces.
    Analyze(AnalyzeArgs),
    /// Print the manifest of a checkpoint file or run directory.
    Inspect {
        path: PathBuf,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Flat JSON config; `task` and `algorithm` are required.
    #[arg(long)]
    config: PathBuf,
    /// Exact output directory instead of a fresh one under MEMSHARE_RUNS_DIR.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// `--key value` config overrides.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    /// Evaluation master seed (defaults to the run's seed).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory (defaults to a subdirectory of the run).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `--key value` environment overrides.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct CorruptArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Std of the noise added after each commit.
    #[arg(long)]
    noise_std: f64,
    /// Replace the memory with fresh noise before every read instead.
    #[arg(long)]
    randomize: bool,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Evaluation episodes per grid cell.
    #[arg(long, default_value_t = 1000)]
    report_episodes: usize,
    /// Grid cells run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value = "full,no-context,no-read,no-write")]
    variants: String,
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// `name=v1,v2,...` with name one of n-agents, memory-size, seed, variant.
    #[arg(long)]
    axis: String,
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    run: PathBuf,
    /// Seed of the instrumented episode (defaults to the run's seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Principal components per heatmap panel.
    #[arg(long, default_value_t = 3)]
    components: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

/// Moves a subcommand's own options ahead of the free-form `--key value`
/// overrides so they are recognized wherever they appear.
fn hoist_options(args: Vec<String>) -> Vec<String> {
    let cmd = Cli::command();
    let Some(pos) = args.iter().position(|a| cmd.find_subcommand(a).is_some()) else {
        return args;
    };
    let sub = cmd.find_subcommand(&args[pos]).expect("found above");
    let known = |name: &str| {
        sub.get_arguments()
            .find(|a| a.get_long() == Some(name))
            .map(|a| a.get_action().takes_values())
    };
    let (mut own, mut rest) = (Vec::new(), Vec::new());
    let mut it = args[pos + 1..].iter();
    while let Some(a) = it.next() {
        let name = a.strip_prefix("--").map(|n| n.split_once('=').map_or(n, |(k, _)| k));
        match name.and_then(known) {
            Some(takes_value) => {
                own.push(a.clone());
                if takes_value && !a.contains('=') {
                    own.extend(it.next().cloned());
                }
            }
            None => rest.push(a.clone()),
        }
    }
    let mut out = args[..=pos].to_vec();
    out.extend(own);
    out.extend(rest);
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse_from(hoist_options(std::env::args().collect()));
    let result = match cli.command {
        Command::Train(a) => commands::train(&a.config, a.run_dir.as_deref(), &a.overrides),
        Command::Eval(a) => commands::eval(&a, None),
        Command::Corrupt(a) => commands::eval(&a.eval, Some((a.noise_std, a.randomize))),
        Command::Ablate(a) => commands::grid(&a.grid, &format!("variant={}", a.variants), "ablate", &a.overrides),
        Command::Sweep(a) => commands::grid(&a.grid, &a.axis, "sweep", &a.overrides),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Inspect { path } => commands::inspect(&path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
