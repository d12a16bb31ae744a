//! Command-line front end for the Rydberg RF receiver simulator.
//!
//! Every subcommand loads one scenario file, applies `--set` overrides
//! (then `--seed`/`--out`, which win), resolves and validates it, runs
//! the campaign, and leaves a self-describing run directory: CSVs, a
//! manifest with the effective config and its hash, and a plot script.
//!
//! Exit codes: 0 success, 2 configuration problems (with the offending
//! field named on stderr), 1 runtime failures.

mod commands;
mod config;
mod errors;
mod manifest;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rydsim_core::characterize::Channel;

use crate::errors::CliError;

#[derive(Parser)]
#[command(
    name = "rydsim",
    version,
    about = "Simulated Rydberg-atom RF receiver: spectroscopy, sensitivity, and QPSK campaigns"
)]
struct Cli {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the scenario's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the scenario's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override one config key, e.g. `--set readout.rbw_hz=100`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reference and RF-driven transmission scans over coupling detuning.
    Spectrum,
    /// Field-calibration campaign: c_cal fit plus the frequency-axis scale.
    Calibrate,
    /// SNR-vs-power sweep at the anchor beatnote, extrapolated to the floor.
    Sensitivity,
    /// Averaged noise-only spectra for each enabled noise term.
    NoiseFloors,
    /// Sensitivity versus beatnote and the doubling bandwidth.
    Bandwidth,
    /// One QPSK capture: constellation, EVM, and filtered baseband.
    Constellation,
    /// EVM campaign over symbol rates or beatnotes.
    EvmSweep {
        /// Receive channel to demodulate through.
        #[arg(long, value_enum, default_value_t = ChannelArg::Atomic)]
        channel: ChannelArg,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ChannelArg {
    Atomic,
    Mixer,
}

impl From<ChannelArg> for Channel {
    fn from(arg: ChannelArg) -> Self {
        match arg {
            ChannelArg::Atomic => Channel::Atomic,
            ChannelArg::Mixer => Channel::Mixer,
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    // Dedicated flags ride the same override path as --set and land last,
    // so they beat any --set for the same key.
    let mut sets = cli.set.clone();
    if let Some(seed) = cli.seed {
        sets.push(format!("seed={seed}"));
    }
    if let Some(out) = &cli.out {
        sets.push(format!("out_dir={}", out.display()));
    }
    let config = config::load(&cli.config, &sets)?;
    let scenario = config.resolve()?;
    match &cli.command {
        Command::Spectrum => commands::spectrum(&config, &scenario),
        Command::Calibrate => commands::calibrate(&config, &scenario),
        Command::Sensitivity => commands::sensitivity(&config, &scenario),
        Command::NoiseFloors => commands::noise_floors(&config, &scenario),
        Command::Bandwidth => commands::bandwidth(&config, &scenario),
        Command::Constellation => commands::constellation(&config, &scenario),
        Command::EvmSweep { channel } => {
            commands::evm_sweep(&config, &scenario, Channel::from(*channel))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprint!("{}", err.record());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
