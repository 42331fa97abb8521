mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use noodle_core::noisyloss::LossKind;
use noodle_core::ood::ScoreKind;

/// Out-of-distribution detection under noisy labels.
#[derive(Debug, Parser)]
#[command(name = "noodle", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub opts: Options,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Options {
    /// Experiment spec (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory for data, checkpoints and reports.
    #[arg(long, global = true, env = "NOODLE_OUT")]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_parser = parse_score)]
    pub score: Option<ScoreKind>,

    #[arg(long, global = true)]
    pub k: Option<usize>,

    #[arg(long, global = true)]
    pub lambda: Option<f64>,

    #[arg(long, global = true, value_parser = parse_loss)]
    pub loss: Option<LossKind>,

    #[arg(long = "noise-rate", global = true)]
    pub noise_rate: Option<f64>,

    #[arg(long, global = true)]
    pub epochs: Option<usize>,

    /// Worker threads for experiment sweeps.
    #[arg(long, global = true, env = "NOODLE_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic train/val/test and OOD feature files.
    GenData,
    /// Train on the training file and write checkpoint, store and loss trace.
    Train,
    /// Score the test and OOD files and write report.json / report.csv.
    Eval,
    /// Run every (method, seed) cell of a spec and write a comparison table.
    Experiment,
}

fn parse_score(s: &str) -> Result<ScoreKind, String> {
    s.parse()
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData => commands::gen_data(&cli.opts),
        Command::Train => commands::train(&cli.opts),
        Command::Eval => commands::eval(&cli.opts),
        Command::Experiment => commands::experiment(&cli.opts),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
