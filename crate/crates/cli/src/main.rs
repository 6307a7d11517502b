use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use udeuq_cli::{cmd_fit, cmd_generate, cmd_report, CliError, RunConfig};

/// Uncertainty quantification for universal differential equations.
#[derive(Parser)]
#[command(name = "udeuq", version)]
struct Cli {
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info", env = "UDEUQ_LOG")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset described by the config.
    Generate { config: PathBuf },
    /// Run the configured UQ method on the generated dataset.
    Fit { config: PathBuf },
    /// Bands, histograms, charts and comparison tables for all fitted methods.
    Report { config: PathBuf },
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let path = match &cli.command {
        Command::Generate { config } | Command::Fit { config } | Command::Report { config } => config,
    };
    let cfg = RunConfig::load(path)?;
    match cli.command {
        Command::Generate { .. } => {
            let dir = cmd_generate(&cfg)?;
            println!("{}", dir.display());
        }
        Command::Fit { .. } => {
            let out = cmd_fit(&cfg)?;
            println!("{}", out.dir.display());
        }
        Command::Report { .. } => {
            let out = cmd_report(&cfg)?;
            println!("{}", out.dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).format_timestamp(None).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
