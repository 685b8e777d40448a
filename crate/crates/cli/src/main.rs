mod epochs;
mod matching;
mod output;
mod scenario;
mod simulate;

use clap::{Args, Parser, Subcommand};
use output::Format;
use scenario::ScenarioFile;
use std::path::PathBuf;
use std::process::ExitCode;

/// Compute-marketplace protocol simulator.
#[derive(Parser)]
#[command(name = "marketsim", version)]
struct Cli {
    /// Print the default scenario as TOML and exit.
    #[arg(long)]
    print_defaults: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct Common {
    /// Scenario TOML file. Omitted keys take their defaults.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run the agent-based marketplace simulation.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also run the same seeds with reputation gating disabled.
        #[arg(long)]
        paired: bool,
    },
    /// Run the staked-compute economy for a number of epochs.
    Epochs {
        #[command(flatten)]
        common: Common,
        /// Overrides `economy.epochs`.
        #[arg(long)]
        epochs: Option<u64>,
    },
    /// Match deployments against processor advertisements.
    Match {
        /// JSON array of deployment specs.
        #[arg(long)]
        deployments: PathBuf,
        /// JSON array of candidates.
        #[arg(long)]
        advertisements: PathBuf,
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Matching time in milliseconds.
        #[arg(long, default_value_t = 0)]
        now: u64,
        /// Write matches and a manifest here instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Printed format: JSON lines or CSV.
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn load(path: Option<&PathBuf>, seed: Option<u64>) -> Result<ScenarioFile, CliError> {
    let mut scenario = match path {
        Some(p) => ScenarioFile::load(p)?,
        None => ScenarioFile::default(),
    };
    if let Some(seed) = seed {
        scenario.sim.seed = seed;
    }
    Ok(scenario)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.print_defaults {
        print!("{}", ScenarioFile::default().canonical());
        return Ok(());
    }
    match cli.command {
        None => Err(CliError::Config("no command given; see --help".into())),
        Some(Command::Simulate { common, paired }) => {
            let scenario = load(common.scenario.as_ref(), common.seed)?;
            simulate::run(&scenario, paired, &common.out, common.format)
        }
        Some(Command::Epochs { common, epochs }) => {
            let mut scenario = load(common.scenario.as_ref(), common.seed)?;
            if let Some(n) = epochs {
                scenario.economy.epochs = n;
            }
            epochs::run(&scenario, &common.out, common.format)
        }
        Some(Command::Match {
            deployments,
            advertisements,
            scenario,
            now,
            out,
            format,
        }) => {
            let scenario = load(scenario.as_ref(), None)?;
            matching::run(
                &scenario,
                &deployments,
                &advertisements,
                now,
                out.as_deref(),
                format,
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}
