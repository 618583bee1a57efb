//! The `simex` command-line tool: JSON-configured runs of the SimEx
//! pipeline and its baselines, the pairwise latency benchmark, and report
//! writing.

pub mod bench;
pub mod commands;
pub mod config;
mod error;
pub mod gallery;
pub mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use simex_core::loss::LossKind;

pub use bench::{bench_pairwise, BenchReport, BenchSettings, LatencyStats, PretrainCost, TransferLatency};
pub use commands::{execute, Outcome};
pub use config::{Command, DatasetDescriptor, DatasetSource, Overrides, RunConfig};
pub use error::{CliError, Context};
pub use gallery::{emit_reconstruction_gallery, encode_pgm};
pub use manifest::Manifest;

#[derive(Debug, Parser)]
#[command(name = "simex", version, about = "Predict dataset and class similarity from autoencoder reconstruction error")]
struct Cli {
    #[command(subcommand)]
    action: Action,
}

#[derive(Debug, Subcommand)]
enum Action {
    /// Train one autoencoder per reference and save the fleet.
    Pretrain(RunArgs),
    /// Order references for each unknown by Δ.
    Compare(RunArgs),
    /// Greedily pair the classes of two labeled datasets by Δ.
    Pair(RunArgs),
    /// Held-out-class confusion probes on a labeled dataset.
    Confusion(RunArgs),
    /// Time SimEx against freeze-and-retrain transfer.
    Bench(RunArgs),
    /// Write the configured datasets as IDX files.
    Synth(RunArgs),
    /// Run the command named in the config file.
    Run(RunArgs),
    /// Print the run-config JSON schema.
    Schema,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    Mse,
    Issim,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Timed runs per benchmark configuration.
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    #[arg(long)]
    fleet_dir: Option<PathBuf>,
    /// Run fleet training and Δ evaluation on one thread.
    #[arg(long)]
    serial: bool,
}

impl RunArgs {
    fn overrides(&self, command: Option<Command>) -> Overrides {
        Overrides {
            command,
            output_dir: self.output.clone(),
            seed: self.seed,
            repeats: self.repeats,
            loss: self.loss.map(|l| match l {
                LossArg::Mse => LossKind::Mse,
                LossArg::Issim => LossKind::issim(),
            }),
            fleet_dir: self.fleet_dir.clone(),
            parallel: self.serial.then_some(false),
        }
    }
}

/// Load, override and validate the config, then execute it.
fn run_action(args: &RunArgs, command: Option<Command>, base: &Path) -> Result<Outcome, CliError> {
    let (mut config, origin) = match &args.config {
        Some(p) => (RunConfig::from_file(&base.join(p))?, p.clone()),
        None => (RunConfig::default(), PathBuf::from("<flags>")),
    };
    config.apply(args.overrides(command));
    let command = config.validate(&origin, base)?;
    execute(&config, command, base)
}

/// Parse `args` (program name first) and run. Returns the process exit
/// status: 0 ok, 1 usage, 2 config, 3 runtime.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let base = Path::new(".");
    let result = match &cli.action {
        Action::Schema => {
            print!("{}", config::RUN_CONFIG_SCHEMA);
            return 0;
        }
        Action::Run(a) => run_action(a, None, base),
        Action::Pretrain(a) => run_action(a, Some(Command::Pretrain), base),
        Action::Compare(a) => run_action(a, Some(Command::Compare), base),
        Action::Pair(a) => run_action(a, Some(Command::Pair), base),
        Action::Confusion(a) => run_action(a, Some(Command::Confusion), base),
        Action::Bench(a) => run_action(a, Some(Command::Bench), base),
        Action::Synth(a) => run_action(a, Some(Command::Synth), base),
    };
    match result {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
