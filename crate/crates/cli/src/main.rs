//! `mappable` command-line driver.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "mappable",
    version,
    about = "Geometrically mappable features: train, evaluate, recover"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every single-config subcommand.
#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, also the default location of inputs.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Only report errors.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene file.
    GenScene {
        #[command(flatten)]
        common: Common,
    },
    /// Train an embedding model on the non-query conditions of a scene.
    Train {
        #[command(flatten)]
        common: Common,
        /// Scene file [default: <out>/scene.txt]
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Embed every scene image with a trained model.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Checkpoint [default: <out>/model.ckpt]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Select landmark images from the training conditions.
    Landmarks {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Localize query images against landmarks and measure proportionality.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Feature file [default: <out>/features.csv]
        #[arg(long)]
        features: Option<PathBuf>,
        /// Landmark file [default: <out>/landmarks.csv]
        #[arg(long)]
        landmarks: Option<PathBuf>,
    },
    /// Recover the query trajectory from masked feature distances.
    Recover {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run two configurations end to end and tabulate their results.
    Compare {
        /// Exactly two TOML run configurations.
        #[arg(long = "config", required = true, num_args = 1)]
        configs: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
}

fn init_logging(quiet: bool) {
    let level = if quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_target(false)
        .format_timestamp(None)
        .try_init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenScene { common } => {
            init_logging(common.quiet);
            commands::gen_scene(&common)
        }
        Command::Train { common, scene } => {
            init_logging(common.quiet);
            commands::train(&common, scene)
        }
        Command::Embed {
            common,
            scene,
            checkpoint,
        } => {
            init_logging(common.quiet);
            commands::embed(&common, scene, checkpoint)
        }
        Command::Landmarks { common, scene } => {
            init_logging(common.quiet);
            commands::landmarks(&common, scene)
        }
        Command::Evaluate {
            common,
            scene,
            features,
            landmarks,
        } => {
            init_logging(common.quiet);
            commands::evaluate(&common, scene, features, landmarks)
        }
        Command::Recover {
            common,
            scene,
            features,
            checkpoint,
        } => {
            init_logging(common.quiet);
            commands::recover(&common, scene, features, checkpoint)
        }
        Command::Compare {
            configs,
            out,
            seed,
            quiet,
        } => {
            init_logging(quiet);
            commands::compare(&configs, &out, seed, quiet)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let first = first
                .lines()
                .next()
                .unwrap_or("invalid usage")
                .trim_start_matches("error: ");
            eprintln!("{}", CliError::usage(first).to_line());
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
