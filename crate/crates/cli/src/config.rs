//! Experiment configuration files and dataset loading.

use std::fs;
use std::path::{Path, PathBuf};

use gvdn::graph::{generate_sbm, load_planetoid, Graph, PlanetoidOptions, SbmConfig};
use gvdn::perturbation::Scenario;
use gvdn::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Where the graph comes from. The tag makes a second source a parse error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// `<dir>/<name>.content` and `<dir>/<name>.cites`.
    Planetoid {
        dir: PathBuf,
        name: String,
        #[serde(default = "yes")]
        normalize_features: bool,
        /// Fixed split seed; when absent each repetition draws its own split.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        split_seed: Option<u64>,
    },
    Sbm(SbmConfig),
    /// A graph JSON document.
    Fixture { path: PathBuf },
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "one")]
    pub repetitions: usize,
    /// One seed per repetition; defaults to `train.seed + i`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "clean")]
    pub scenario: Scenario,
}

fn clean() -> Scenario {
    Scenario::Clean
}

/// A loaded graph plus printable node identifiers.
pub struct Dataset {
    pub graph: Graph,
    pub node_ids: Vec<String>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.repetitions == 0 {
            return Err(CliError::config("repetitions must be at least 1"));
        }
        if let Some(seeds) = &self.seeds {
            if seeds.len() != self.repetitions {
                return Err(CliError::config(format!(
                    "{} seeds given for {} repetitions",
                    seeds.len(),
                    self.repetitions
                )));
            }
        }
        self.train.validate().map_err(|e| CliError::config(e.to_string()))?;
        if let DatasetSource::Sbm(s) = &self.dataset {
            s.validate().map_err(|e| CliError::config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.repetitions as u64).map(|i| self.train.seed + i).collect(),
        }
    }

    /// Training settings for one repetition.
    pub fn train_for(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }

    pub fn load_dataset(&self, seed: u64) -> Result<Dataset, CliError> {
        match &self.dataset {
            DatasetSource::Planetoid {
                dir,
                name,
                normalize_features,
                split_seed,
            } => {
                let content = dir.join(format!("{name}.content"));
                let cites = dir.join(format!("{name}.cites"));
                for p in [&content, &cites] {
                    if !p.is_file() {
                        return Err(CliError::config(format!("dataset file not found: {}", p.display())));
                    }
                }
                let opts = PlanetoidOptions {
                    normalize_features: *normalize_features,
                    split_seed: split_seed.unwrap_or(seed),
                    ..PlanetoidOptions::default()
                };
                let data = load_planetoid(&content, &cites, &opts).map_err(CliError::dataset)?;
                if data.skipped_edges > 0 {
                    log::warn!("{name}: skipped {} citations to unknown nodes", data.skipped_edges);
                }
                Ok(Dataset {
                    graph: data.graph,
                    node_ids: data.node_ids,
                })
            }
            DatasetSource::Sbm(s) => {
                let graph = generate_sbm(s).map_err(CliError::dataset)?;
                Ok(Dataset::numbered(graph))
            }
            DatasetSource::Fixture { path } => {
                if !path.is_file() {
                    return Err(CliError::config(format!("dataset file not found: {}", path.display())));
                }
                let graph = Graph::read_json(path).map_err(CliError::dataset)?;
                Ok(Dataset::numbered(graph))
            }
        }
    }
}

impl Dataset {
    fn numbered(graph: Graph) -> Self {
        let node_ids = (0..graph.num_nodes()).map(|i| i.to_string()).collect();
        Dataset { graph, node_ids }
    }
}

/// Command-line values that replace config-file values.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Directory for every artifact of the run.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Seed of the first repetition (clears an explicit seed list).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replaces the Planetoid directory.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub retrain_epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub gamma_min: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(r) = self.repetitions {
            cfg.repetitions = r;
            cfg.seeds = None;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
            cfg.seeds = None;
        }
        if let Some(d) = &self.data_dir {
            match &mut cfg.dataset {
                DatasetSource::Planetoid { dir, .. } => *dir = d.clone(),
                _ => return Err(CliError::config("--data-dir needs a planetoid dataset")),
            }
        }
        if let Some(e) = self.epochs {
            // Keep the retraining budget's length after the training run.
            let extra = cfg.train.total_retrain_epochs.saturating_sub(cfg.train.train_epochs);
            cfg.train.train_epochs = e;
            cfg.train.total_retrain_epochs = e + extra;
        }
        if let Some(e) = self.retrain_epochs {
            cfg.train.total_retrain_epochs = e;
        }
        if let Some(h) = self.hidden {
            cfg.train.hidden_units = h;
        }
        if let Some(lr) = self.learning_rate {
            cfg.train.learning_rate = lr;
        }
        if let Some(g) = self.gamma_min {
            cfg.train.gamma_min = g;
        }
        cfg.validate()
    }
}
