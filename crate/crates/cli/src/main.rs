//! `bilateral-il`: data collection, training, evaluation and the teleoperation server.

mod commands;
mod manifest;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use bilateral_il::models::ModelKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "bilateral-il", version, about = "Bilateral-control imitation learning for pen writing")]
pub struct Cli {
    /// TOML configuration file (built-in profile when absent).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in profile: `paper` or `desk`.
    #[arg(long, global = true)]
    pub profile: Option<String>,
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Print a machine-readable summary on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the demonstration dataset.
    Collect {
        /// Also keep the 1 ms originals under `<data-dir>/raw`.
        #[arg(long)]
        raw: bool,
    },
    /// Train models on the collected dataset.
    Train(TrainArgs),
    /// One autonomous writing run.
    Run(RunArgs),
    /// Score every model and seed at every evaluation height.
    Eval(EvalArgs),
    /// Spectrum of a training channel and its energy below the slow cutoff.
    Spectrum {
        /// Trial channel name, e.g. `s_th1`.
        #[arg(long, default_value = "s_th1")]
        channel: String,
    },
    /// Host the teleoperation WebSocket endpoint.
    Serve(ServeArgs),
    /// Tables and trace index from the last `eval`.
    Report,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Model kind; all kinds when omitted.
    #[arg(long, value_parser = parse_kind)]
    pub model: Option<ModelKind>,
    /// Training seeds, comma separated (default: the configured seed).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long, value_parser = parse_kind)]
    pub model: ModelKind,
    /// Paper height (mm).
    #[arg(long)]
    pub height: f64,
    /// Seconds (default from the config).
    #[arg(long)]
    pub duration: Option<f64>,
    /// Training seed of the model file to use.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_parser = parse_kind)]
    pub model: Option<ModelKind>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    /// Initial paper height (mm).
    #[arg(long)]
    pub height: Option<f64>,
    /// Simulated seconds per wall-clock second.
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
}

fn parse_kind(s: &str) -> Result<ModelKind, bilateral_il::Error> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
