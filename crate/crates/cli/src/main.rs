//! `cavdet`: simulate and analyse cavity-based atom detection experiments.

mod commands;
mod config;
mod error;
mod io;
mod manifest;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::Report;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "cavdet",
    version,
    about = "Cavity-enhanced atom detection: simulation and analysis"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: paper-reflection, paper-fluorescence or table1.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Format of the report on stdout.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Format of error reports on stderr.
    #[arg(long, global = true, value_enum, default_value = "text")]
    error_format: ErrorFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ErrorFormat {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// N_eff distribution and moments.
    Neff {
        /// Overrides neff.mean_neff.
        #[arg(long)]
        mean: Option<f64>,
    },
    /// Synthetic count streams for a cloud transit.
    Simulate {
        /// Overrides plan.n_trials.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// g², Var/mean and fidelity reports for a counts file.
    Analyze {
        #[arg(long)]
        input: PathBuf,
    },
    /// Fidelity comparison table for published detector rates.
    Table1,
    /// Quantum steady state of the driven atom–cavity system.
    Steady,
    /// Zeeman optical-pumping model and C′/C.
    Zeeman,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::default_config(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match &cli.command {
        Command::Neff { mean: Some(m) } => cfg.neff.mean_neff = *m,
        Command::Simulate { trials: Some(n) } => cfg.plan.n_trials = *n,
        _ => {}
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(Report, Format), CliError> {
    let cfg = load_config(cli)?;
    let out = &cli.out;
    let (report, default) = match &cli.command {
        Command::Neff { .. } => (commands::neff(&cfg, out)?, Format::Json),
        Command::Simulate { .. } => {
            cfg.validate()?;
            (commands::simulate(&cfg, out)?, Format::Json)
        }
        Command::Analyze { input } => (commands::analyze(&cfg, input, out)?, Format::Json),
        Command::Table1 => (commands::table1(&cfg, out)?, Format::Text),
        Command::Steady => (commands::steady(&cfg, out)?, Format::Json),
        Command::Zeeman => (commands::zeeman(&cfg, out)?, Format::Json),
    };
    Ok((report, cli.format.unwrap_or(default)))
}

fn render(report: &Report, format: Format) -> Vec<u8> {
    let json = || {
        let mut v = serde_json::to_vec_pretty(&report.summary).expect("report serializes");
        v.push(b'\n');
        v
    };
    match format {
        Format::Json => json(),
        Format::Csv => report.table.clone().unwrap_or_else(json),
        Format::Text => match &report.text {
            Some(t) => t.clone().into_bytes(),
            None => json(),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok((report, format)) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(&render(&report, format)).is_err() {
                return ExitCode::from(4);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            match cli.error_format {
                ErrorFormat::Json => eprintln!("{}", e.to_json()),
                ErrorFormat::Text => eprintln!("cavdet: {e}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
