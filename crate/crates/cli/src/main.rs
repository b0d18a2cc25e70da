mod artifacts;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::ExploreMode;
use config::{ExperimentConfig, Overrides};
use error::CliError;

/// Train the diffusion encoder, perturb graphs, retrain, and report.
#[derive(Parser)]
#[command(name = "gvdn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        self.overrides.apply(&mut cfg)?;
        // Provenance: the effective config after overrides.
        artifacts::write_text(&cfg.output_dir.join("config.toml"), &cfg.to_toml()?)?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train and write checkpoint, embedding and loss history per seed.
    Train(Common),
    /// Perturb per the config's scenario, retrain, and score clean / perturbed / recovered.
    PerturbRetrain {
        #[command(flatten)]
        common: Common,
        /// Start from this checkpoint instead of training first.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Reference embedding (`hemb.bin`) for `--checkpoint`; recomputed
        /// from the checkpoint when absent.
        #[arg(long, requires = "checkpoint")]
        hemb: Option<PathBuf>,
        /// Retrain with the diffusion rate pinned to 1.
        #[arg(long)]
        no_diffusion: bool,
    },
    /// Accuracy of the noisy GCN baseline and the plain encoder across noise weights.
    AblateNoise {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = commands::DEFAULT_NOISE_WEIGHTS)]
        weights: Vec<f64>,
    },
    /// Validation accuracy per γ_min.
    SweepGamma {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = commands::DEFAULT_GAMMA_MINS)]
        values: Vec<f64>,
    },
    /// Train and retrain over a label-noise or label-rate grid.
    Explore {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: ExploreMode,
        /// Defaults to 0–1 by 0.1 for label noise, 1%–10% for sparse labels.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Write node id + embedding rows as CSV.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to `<output_dir>/embeddings.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(c) => commands::cmd_train(&c.load()?),
        Command::PerturbRetrain {
            common,
            checkpoint,
            hemb,
            no_diffusion,
        } => commands::cmd_perturb_retrain(&common.load()?, checkpoint.as_deref(), hemb.as_deref(), no_diffusion),
        Command::AblateNoise { common, weights } => commands::cmd_ablate_noise(&common.load()?, &weights),
        Command::SweepGamma { common, values } => commands::cmd_sweep_gamma(&common.load()?, &values),
        Command::Explore { common, mode, grid } => {
            let grid = grid.unwrap_or_else(|| mode.default_grid());
            commands::cmd_explore(&common.load()?, mode, &grid)
        }
        Command::ExportEmbeddings {
            common,
            checkpoint,
            output,
        } => commands::cmd_export_embeddings(&common.load()?, &checkpoint, output.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
