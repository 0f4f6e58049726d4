//! `smi`: command-line front end of the sideband interferometer simulator.
//!
//! Every run writes its artifacts, the resolved `config.toml` and a `manifest.json`
//! into the output directory. Exit codes: 0 success, 2 configuration error, 3 runtime
//! or convergence error, 4 I/O error.

mod commands;
mod config;
mod output;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, Operating, PerturbationKind};
use output::{Format, OutDir};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn from_core(e: smi_core::Error) -> Self {
        match e.root() {
            smi_core::Error::Config(_) | smi_core::Error::InvalidInput(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "smi", version, about = "Sideband microwave interferometer simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML, or JSON by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: smi-<command>].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Time-compression factor, overriding the configuration.
    #[arg(long, global = true)]
    compress: Option<f64>,
    /// Format of tabular artifacts.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Spectroscopy sweep of the carrier across the resonance.
    Sweep {
        #[arg(long, value_enum)]
        operating: Option<Operating>,
    },
    /// Common-mode sensitivity over the (a2, α2) plane.
    Map {
        #[arg(long, value_enum)]
        perturbation: Option<PerturbationKind>,
        /// Also export a linecut through the rejection point.
        #[arg(long)]
        linecut: bool,
    },
    /// Simulated frequency-noise monitoring run with analysis.
    Monitor {
        #[arg(long, value_enum)]
        operating: Option<Operating>,
        /// Physical duration (s).
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Automated set-up procedure.
    Calibrate,
    /// Analysis of an existing trace CSV.
    Analyze {
        /// CSV with a `t_s` column.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "detuning_hz")]
        column: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Sweep { .. } => "sweep",
            Command::Map { .. } => "map",
            Command::Monitor { .. } => "monitor",
            Command::Calibrate => "calibrate",
            Command::Analyze { .. } => "analyze",
        }
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(c) = cli.compress {
        cfg.compress = c;
    }
    match &cli.command {
        Command::Sweep { operating: Some(o) } => cfg.sweep.operating = *o,
        Command::Map { perturbation, linecut } => {
            if let Some(p) = perturbation {
                cfg.map.perturbation = *p;
            }
            cfg.map.linecut |= *linecut;
        }
        Command::Monitor { operating, duration } => {
            if let Some(o) = operating {
                cfg.monitor.operating = *o;
            }
            if let Some(d) = duration {
                cfg.monitor.duration_s = *d;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<String, CliError> {
    let cfg = resolve(cli)?;
    let name = cli.command.name();
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(format!("smi-{name}")));
    let mut inputs = Vec::new();
    let input_trace = match &cli.command {
        Command::Analyze { input, column } => {
            let (t, a) = commands::read_trace(input, column)?;
            inputs.push(a);
            Some(t)
        }
        _ => None,
    };
    let mut out = OutDir::create(&dir, cli.format)?;
    let msg = match &cli.command {
        Command::Sweep { .. } => commands::sweep(&cfg, &mut out)?,
        Command::Map { .. } => commands::map(&cfg, &mut out)?,
        Command::Monitor { .. } => commands::monitor(&cfg, &mut out)?,
        Command::Calibrate => commands::calibrate(&cfg, &mut out)?,
        Command::Analyze { .. } => commands::analyze(&cfg, input_trace.as_ref().expect("read above"), &mut out)?,
    };
    let path = out.finish(name, &cfg.to_toml(), cfg.seed, inputs)?;
    Ok(format!("{msg}\nartifacts in {}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(msg) => {
            // A closed stdout must not turn a finished run into a failure.
            let _ = writeln!(std::io::stdout(), "{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("smi: {e}");
            ExitCode::from(e.code())
        }
    }
}
