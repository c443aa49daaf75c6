use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mlmc_risk_cli::commands::{cmd_compare_estimators, cmd_complexity, cmd_estimate, cmd_reliability};
use mlmc_risk_cli::Settings;

/// Multilevel Monte Carlo estimation of VaR, CVaR and distribution curves.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file (flat `key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Overrides `seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; MLMC_RISK_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// One CMLMC run: result.json and curves.csv.
    Estimate,
    /// Repeated runs against a reference: reliability.csv.
    Reliability,
    /// Mean cost per tolerance with a Monte Carlo baseline: complexity.csv.
    Complexity,
    /// Error estimators against exact and brute-force references.
    CompareEstimators,
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, String> {
    match std::env::var("MLMC_RISK_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .map(Some)
            .ok_or_else(|| format!("MLMC_RISK_THREADS must be a positive integer, got `{v}`")),
        Err(_) => Ok(flag),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();

    match thread_count(cli.threads) {
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("could not size the thread pool: {e}");
            }
        }
        Ok(None) => {}
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }

    let settings = match &cli.config {
        Some(p) => Settings::load(p, cli.seed),
        None => Settings::from_text("", cli.seed),
    };
    let settings = match settings {
        Ok(s) => s,
        Err(e) => {
            let src = cli.config.as_ref().map_or("<defaults>".to_string(), |p| p.display().to_string());
            eprintln!("error: {src}: {e}");
            return ExitCode::from(1);
        }
    };

    let result = match cli.command {
        Command::Estimate => cmd_estimate(&settings, &cli.out),
        Command::Reliability => cmd_reliability(&settings, &cli.out),
        Command::Complexity => cmd_complexity(&settings, &cli.out),
        Command::CompareEstimators => cmd_compare_estimators(&settings, &cli.out),
    };
    match result {
        Ok(c) => ExitCode::from(c.exit_code() as u8),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
