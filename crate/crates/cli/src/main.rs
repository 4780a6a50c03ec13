mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Missing(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
            CliError::Missing(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Missing(m) => write!(f, "missing artifact: {m}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "heterograph", version, about = "Land-use regression on heterogeneous mobility graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
pub struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the root seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic city.
    Synth(Common),
    /// Fit every configured model and save parameter snapshots.
    Train(Common),
    /// Test-split metrics and residuals for the saved snapshots.
    Eval(Common),
    /// Retrain on subsets of node types.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// all, bus+bike, bus+tube or bus-only; every scenario when omitted.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Integrated-gradients heatmap, or one node's attributions.
    Attribute {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        node_id: Option<String>,
    },
    /// Counterfactual for one node, or the table over all nodes.
    Counterfactual {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        node_id: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(c) => commands::run("synth", &c, commands::synth),
        Command::Train(c) => commands::run("train", &c, commands::train),
        Command::Eval(c) => commands::run("eval", &c, commands::eval),
        Command::Ablate { common, scenario } => {
            commands::run("ablate", &common, |ctx| commands::ablate(ctx, scenario.as_deref()))
        }
        Command::Attribute { common, node_id } => {
            commands::run("attribute", &common, |ctx| commands::attribute(ctx, node_id.as_deref()))
        }
        Command::Counterfactual { common, node_id } => {
            commands::run("counterfactual", &common, |ctx| commands::counterfactual(ctx, node_id.as_deref()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("heterograph: {e}");
            ExitCode::from(e.code())
        }
    }
}
