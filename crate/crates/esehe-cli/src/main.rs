//! `esehe` command-line front end.
//!
//! Exit codes: 0 success, 2 bad arguments or config, 3 simulation failure,
//! 4 I/O failure.

mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Default output root when `--out` is not given.
pub const OUT_ENV: &str = "ESEHE_OUT";

#[derive(Debug, Parser)]
#[command(name = "esehe", version, about = "Storage-enhanced hydrogen electrolyzer simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write trajectory, summary and event log CSVs.
    Simulate(commands::SimulateArgs),
    /// Eigenvalue sweeps of the linearised DC-link model.
    Linearize(commands::LinearizeArgs),
    /// Degradation, losses, sizing and cost reports.
    Econ(commands::EconArgs),
    /// Scenario batches across seeds, or life-cycle cost sensitivity.
    Sweep(commands::SweepArgs),
    /// Sampled stack U-I characteristic.
    UiCurve(commands::UiCurveArgs),
}

/// Flags shared by every verb.
#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output directory; defaults to `$ESEHE_OUT/<verb>` or `out/<verb>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also render SVG plots next to the CSVs.
    #[arg(long)]
    pub plots: bool,
}

impl OutputArgs {
    pub fn dir(&self, verb: &str) -> PathBuf {
        match &self.out {
            Some(p) => p.clone(),
            None => std::env::var_os(OUT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("out"))
                .join(verb),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Linearize(a) => commands::linearize(&a),
        Command::Econ(a) => commands::econ(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::UiCurve(a) => commands::ui_curve(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("esehe: error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
