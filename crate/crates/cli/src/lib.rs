//! Library side of the `fscdma` binary: argument parsing, configuration
//! layering and the subcommand bodies.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod config;
pub mod selftest;

use commands::{Figure, Mode};
use config::{ConfigError, Settings};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] fscdma_core::SimError),
    #[error(transparent)]
    Sensing(#[from] fscdma_core::SensingError),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("{0}")]
    Failed(String),
}

#[derive(Debug, Parser)]
#[command(
    name = "fscdma",
    version,
    about = "Fragmented-spectrum OFDM-CDMA codes, sensing and BER"
)]
pub struct Cli {
    /// Flat key=value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides run.master_seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output path; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Config override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build and verify the order-n code.
    Codes { n: usize },
    /// Energy-detection statistics.
    Sensing {
        #[command(subcommand)]
        command: SensingCommand,
    },
    /// BER curves.
    Ber {
        #[arg(long, value_enum, default_value = "both")]
        mode: Mode,
        #[arg(long, value_enum)]
        figure: Option<Figure>,
    },
    /// Fast invariant suite.
    Selftest {
        #[arg(long, hide = true)]
        corrupt_prime: Option<u64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SensingCommand {
    /// False-alarm and detection probability over a threshold grid.
    Roc {
        /// Cross-check against sample-level simulation.
        #[arg(long)]
        validate: bool,
    },
}

/// Builds the layered settings for `cli`.
pub fn settings_for(cli: &Cli) -> Result<Settings, CliError> {
    let mut s = Settings::default();
    if let Command::Ber { figure: Some(f), .. } = &cli.command {
        for (k, v) in f.preset() {
            s.set(k, v, f.name())?;
        }
    }
    if let Some(path) = &cli.config {
        s.apply_file(path)?;
    }
    for a in &cli.set {
        s.apply_assignment(a, "--set")?;
    }
    if let Some(seed) = cli.seed {
        s.set("run.master_seed", &seed.to_string(), "--seed")?;
    }
    Ok(s.resolved()?)
}

/// Runs a parsed command; `Ok(false)` means a verification failed.
pub fn run(cli: &Cli, stderr: &mut dyn Write) -> Result<bool, CliError> {
    if let Some(n) = cli.threads {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Codes { n } => commands::codes(*n, out, stderr),
        Command::Sensing {
            command: SensingCommand::Roc { validate },
        } => commands::sensing_roc(&settings_for(cli)?, *validate, out, stderr),
        Command::Ber { mode, figure } => commands::ber(&settings_for(cli)?, *mode, *figure, out, stderr),
        Command::Selftest { corrupt_prime } => {
            let settings = settings_for(cli)?;
            let seed: u64 = settings.get("run.master_seed")?;
            let reports = selftest::run(
                seed,
                &selftest::Faults {
                    corrupt_prime: *corrupt_prime,
                },
            );
            let text = selftest::render(&reports);
            print!("{text}");
            if let Some(p) = out {
                std::fs::write(p, &text).map_err(|e| CliError::Io(p.display().to_string(), e))?;
            }
            Ok(reports.iter().all(|r| r.passed))
        }
    }
}
