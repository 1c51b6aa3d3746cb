use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jumpvol::commands::{self, Failure, RunContext};
use jumpvol::config::RunConfig;
use jumpvol_core::fit::Spec;

/// Intraday volatility jumps, the asymmetric jump MEM, and announcement
/// classification.
#[derive(Debug, Parser)]
#[command(name = "jumpvol", version)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding every stage's inputs and outputs.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic prices, announcements and the latent model state.
    Simulate,
    /// Realized measures, jump decomposition and time-of-day adjustment.
    Measures {
        /// Quantile level of the jump threshold.
        #[arg(long)]
        q: Option<f64>,
    },
    /// Fit the restricted and unrestricted models per ticker.
    Estimate {
        /// Spec whose filtered state is exported for classification.
        #[arg(long, value_parser = parse_spec)]
        spec: Option<Spec>,
    },
    /// Label announcements and compare labelings across tickers.
    Classify,
}

fn parse_spec(s: &str) -> Result<Spec, String> {
    match s {
        "restricted" => Ok(Spec::Restricted),
        "unrestricted" => Ok(Spec::Unrestricted),
        _ => Err(format!("expected restricted or unrestricted, got {s:?}")),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| Failure::Input(e.into()))?,
        None => RunConfig::default(),
    };
    let ctx = RunContext::new(config, cli.out, cli.seed);
    match cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::Measures { q } => commands::measures(&ctx, q),
        Command::Estimate { spec } => commands::estimate(&ctx, spec),
        Command::Classify => commands::classify(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.exit_code())
        }
    }
}
