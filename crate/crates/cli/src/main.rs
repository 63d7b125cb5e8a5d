//! `spectra-dx`: reproducible spectral-diagnosis and mask-refinement
//! experiments.
//!
//! Exit codes: 0 success, 2 usage/config/malformed input, 3 data integrity,
//! 4 domain error (e.g. a mask region too small to analyse).

mod commands;
mod config;

use std::fmt;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use commands::{cls, dx, flow, simulate};
use config::Common;

#[derive(Debug, Parser)]
#[command(name = "spectra-dx", version, about = "Spectral anomaly scoring and flow-matching mask refinement")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte Carlo spectra of noise or spiked feature matrices.
    Simulate(simulate::SimulateArgs),
    /// Write a seeded noise/spiked feature matrix (CSV or binary).
    GenFeatures(simulate::GenFeaturesArgs),
    /// Spectral report of a feature file.
    Sas(simulate::SasArgs),
    /// Flow-matching mask refinement.
    #[command(subcommand)]
    Flow(flow::FlowCommand),
    /// Synthetic radiograph-like cases with masks and their SAS.
    SynthDx(dx::SynthArgs),
    /// Fit the focal-loss classifier on `sas,label` rows.
    TrainCls(cls::TrainArgs),
    /// Diagnose one image given its mask and a classifier.
    Diagnose(dx::DiagnoseArgs),
    /// Classification metrics and ROC/PR curves from `prob,label` rows.
    EvalCls(cls::EvalArgs),
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<spectra_dx::Error> for CliError {
    fn from(e: spectra_dx::Error) -> Self {
        use spectra_dx::Error as E;
        let code = match e {
            E::DataIntegrity(_) => 3,
            E::TooSmallRegion { .. } | E::Diverged { .. } => 4,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::usage(e.to_string())
    }
}

/// Caps rayon's pool from `SPECTRA_DX_THREADS` (unset or 0 = automatic).
fn init_threads() -> Result<(), CliError> {
    let n = match std::env::var("SPECTRA_DX_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::usage(format!("SPECTRA_DX_THREADS must be a non-negative integer, got {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let common = &cli.common;
    match &cli.command {
        Command::Simulate(a) => simulate::simulate(common, a),
        Command::GenFeatures(a) => simulate::gen_features(common, a),
        Command::Sas(a) => simulate::sas(common, a),
        Command::Flow(c) => flow::run(common, c),
        Command::SynthDx(a) => dx::synth(common, a),
        Command::TrainCls(a) => cls::train(common, a),
        Command::Diagnose(a) => dx::diagnose(common, a),
        Command::EvalCls(a) => cls::eval(common, a),
    }
}

/// Usage line of the subcommand that failed, shown after config errors.
fn usage_for(args: &[String]) -> Option<String> {
    let cmd = Cli::command();
    let mut sub = None;
    let mut path = vec![cmd.get_name().to_string()];
    for a in args.iter().skip(1).filter(|a| !a.starts_with('-')) {
        let next = match &sub {
            None => cmd.find_subcommand(a).cloned(),
            Some(c) => clap::Command::find_subcommand(c, a).cloned(),
        };
        match next {
            Some(n) => {
                path.push(a.clone());
                sub = Some(n);
            }
            None => break,
        }
    }
    sub.map(|c| c.bin_name(path.join(" ")).render_usage().to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.code == 2 {
                let args: Vec<String> = std::env::args().collect();
                if let Some(usage) = usage_for(&args) {
                    eprintln!("\n{usage}\n\nFor more information, try '--help'.");
                }
            }
            ExitCode::from(e.code)
        }
    }
}
