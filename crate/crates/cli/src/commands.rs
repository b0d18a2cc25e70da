//! One function per subcommand. Repetitions run sequentially in seed order.

use std::fs;
use std::path::Path;

use gvdn::graph::Graph;
use gvdn::metrics::{evaluate, evaluate_with, score_logits, Metrics};
use gvdn::model::{forward, Checkpoint, EpsilonMode};
use gvdn::perturbation::{
    inject_label_noise, random_perturb, sparsify_info, subsample_train_mask, InjectedFeatures, PerturbationResult,
    Scenario,
};
use gvdn::train::{gcn_eval_logits, retrain, train, train_gcn, write_loss_history, GcnConfig, TrainConfig};
use log::info;
use serde::Serialize;

use crate::artifacts::{
    artifact, embeddings_csv, hemb_bytes, read_hemb, seed_suffix, stat, summarize, write_csv, write_json, write_jsonl,
    write_text, MetricsRow, RowSummary, Stat,
};
use crate::config::ExperimentConfig;
use crate::error::CliError;

/// The graph the encoder is trained on. Label scenarios corrupt the
/// training labels or split; structural scenarios leave it untouched.
pub fn training_graph(graph: &Graph, scenario: Scenario, seed: u64) -> Result<Graph, CliError> {
    Ok(match scenario {
        Scenario::LabelNoise { ratio } => {
            let labels = inject_label_noise(graph.labels(), &graph.masks().train, ratio, graph.num_classes(), seed)?;
            graph.with_labels(labels)?
        }
        Scenario::SparseLabels { rate } => graph.with_masks(subsample_train_mask(graph.masks(), rate, seed)?)?,
        _ => graph.clone(),
    })
}

/// The structural perturbation applied after training.
pub fn perturb(graph: &Graph, scenario: Scenario, seed: u64) -> Result<PerturbationResult, CliError> {
    Ok(match scenario {
        Scenario::RandomPerturb { p_rdm } => random_perturb(graph, p_rdm, seed, InjectedFeatures::CopyExisting)?,
        Scenario::InfoSparse => sparsify_info(graph, seed)?,
        _ => PerturbationResult::identity(graph),
    })
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read checkpoint {}: {e}", path.display())))?;
    Checkpoint::from_json(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn reference_embedding(graph: &Graph, ck: &Checkpoint) -> Result<gvdn::tensor::DenseMatrix, CliError> {
    Ok(forward(graph, &ck.params, &ck.schedule, ck.epoch.max(1), EpsilonMode::Zero)?.hemb)
}

fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CliError> {
    write_text(path, &ck.to_json()?)
}

#[derive(Serialize)]
struct Summary<'a> {
    command: &'a str,
    scenario: String,
    seeds: Vec<u64>,
    rows: Vec<RowSummary>,
}

// ---------------------------------------------------------------- train

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let out = &cfg.output_dir;
    let mut rows = Vec::new();
    for seed in cfg.seeds() {
        let data = cfg.load_dataset(seed)?;
        let graph = training_graph(&data.graph, cfg.scenario, seed)?;
        let result = train(&graph, &cfg.train_for(seed))?;
        let sfx = seed_suffix(cfg.repetitions, seed);
        save_checkpoint(&artifact(out, "checkpoint", &sfx, "json"), &result.checkpoint)?;
        write_text_bytes(&artifact(out, "hemb", &sfx, "bin"), &hemb_bytes(&result.hemb))?;
        write_loss_history(artifact(out, "losses", &sfx, "csv"), &result.state.history)?;
        let test = evaluate(&result.checkpoint, &graph, &graph.masks().test, "clean")?;
        info!(
            "seed {seed}: best epoch {} (validation {:.4}), test accuracy {:.4}",
            result.checkpoint.epoch, result.state.best_val_accuracy, test.accuracy
        );
        rows.push(MetricsRow {
            command: "train",
            seed,
            row: "test".into(),
            metrics: test,
        });
    }
    write_jsonl(&out.join("train-metrics.jsonl"), &rows)?;
    write_json(
        &out.join("train-summary.json"),
        &Summary {
            command: "train",
            scenario: cfg.scenario.tag(),
            seeds: cfg.seeds(),
            rows: summarize(&rows),
        },
    )
}

fn write_text_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    gvdn::io::write_atomic(path, bytes)?;
    info!("wrote {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------- perturb-retrain

pub fn cmd_perturb_retrain(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    hemb: Option<&Path>,
    no_diffusion: bool,
) -> Result<(), CliError> {
    let out = &cfg.output_dir;
    let stem = if no_diffusion { "retrain-no-diffusion" } else { "retrain" };
    let given = checkpoint.map(read_checkpoint).transpose()?;
    let given_hemb = hemb.map(read_hemb).transpose()?;
    let mut rows = Vec::new();
    for seed in cfg.seeds() {
        let data = cfg.load_dataset(seed)?;
        let graph = training_graph(&data.graph, cfg.scenario, seed)?;
        let train_cfg = cfg.train_for(seed);
        let sfx = seed_suffix(cfg.repetitions, seed);
        let ck = match &given {
            Some(ck) => {
                ck.params.check_graph(&graph)?;
                ck.clone()
            }
            None => {
                let t = train(&graph, &train_cfg)?;
                save_checkpoint(&artifact(out, "checkpoint", &sfx, "json"), &t.checkpoint)?;
                t.checkpoint
            }
        };
        let reference = match &given_hemb {
            Some(h) if h.shape() != (graph.num_nodes(), ck.params.hidden()) => {
                return Err(CliError::config(format!(
                    "embedding is {:?}, checkpoint expects {}x{}",
                    h.shape(),
                    graph.num_nodes(),
                    ck.params.hidden()
                )))
            }
            Some(h) => h.clone(),
            None => reference_embedding(&graph, &ck)?,
        };
        let pert = perturb(&graph, cfg.scenario, seed)?;
        let retrain_cfg = TrainConfig {
            diffusion: !no_diffusion && train_cfg.diffusion,
            ..train_cfg
        };
        let re = retrain(&graph, &ck, &reference, &pert, &retrain_cfg)?;
        save_checkpoint(&artifact(out, &format!("{stem}-checkpoint"), &sfx, "json"), &re.checkpoint)?;
        write_loss_history(artifact(out, &format!("{stem}-losses"), &sfx, "csv"), &re.state.history)?;
        let r = re.report;
        info!(
            "seed {seed}: clean {:.4}, perturbed {:.4}, recovered {:.4}",
            r.clean.accuracy, r.perturbed.accuracy, r.recovered.accuracy
        );
        for (name, m) in [("clean", r.clean), ("perturbed", r.perturbed), ("recovered", r.recovered)] {
            rows.push(MetricsRow {
                command: "perturb-retrain",
                seed,
                row: name.into(),
                metrics: m,
            });
        }
    }
    write_jsonl(&out.join(format!("{stem}-metrics.jsonl")), &rows)?;
    write_json(
        &out.join(format!("{stem}-summary.json")),
        &Summary {
            command: "perturb-retrain",
            scenario: cfg.scenario.tag(),
            seeds: cfg.seeds(),
            rows: summarize(&rows),
        },
    )
}

// ---------------------------------------------------------------- ablate-noise

pub const DEFAULT_NOISE_WEIGHTS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 0.95];

pub fn cmd_ablate_noise(cfg: &ExperimentConfig, weights: &[f64]) -> Result<(), CliError> {
    if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(CliError::config(format!("noise weight {w} outside [0, 1]")));
    }
    let mut rows: Vec<Vec<String>> = Vec::new();
    for seed in cfg.seeds() {
        let data = cfg.load_dataset(seed)?;
        let graph = &data.graph;
        let test = &graph.masks().test;
        for (k, &w) in weights.iter().enumerate() {
            let eval_seed = seed.wrapping_mul(1_000).wrapping_add(k as u64);
            let gcn = train_gcn(
                graph,
                &GcnConfig {
                    hidden_units: cfg.train.hidden_units,
                    learning_rate: cfg.train.learning_rate,
                    epochs: cfg.train.train_epochs,
                    noise_weight: w,
                    seed,
                    ..GcnConfig::default()
                },
            )?;
            let logits = gcn_eval_logits(graph, &gcn.params, w, eval_seed)?;
            let g = score_logits(&logits, graph.labels(), test, "gcn")?;

            let vanilla_cfg = TrainConfig {
                diffusion: false,
                propagation: false,
                initial_wz: Some(w),
                ..cfg.train_for(seed)
            };
            let v = train(graph, &vanilla_cfg)?;
            let m = evaluate_with(&v.checkpoint, graph, test, "gvdn-vanilla", EpsilonMode::Sample(eval_seed))?;
            info!("seed {seed} W_ns {w}: gcn {:.4}, gvdn-vanilla {:.4}", g.accuracy, m.accuracy);
            for (model, m) in [("gcn", g), ("gvdn-vanilla", m)] {
                rows.push(vec![
                    model.into(),
                    w.to_string(),
                    seed.to_string(),
                    m.accuracy.to_string(),
                    m.normalized_entropy.to_string(),
                ]);
            }
        }
    }
    write_csv(
        &cfg.output_dir.join("ablate-noise.csv"),
        &["model", "weight", "seed", "accuracy", "normalized_entropy"],
        &rows,
    )
}

// ---------------------------------------------------------------- sweep-gamma

pub const DEFAULT_GAMMA_MINS: [f64; 7] = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99];

#[derive(Serialize)]
struct SweepSummary {
    selected_gamma_min: f64,
    validation_accuracy: f64,
    points: Vec<SweepPoint>,
}

#[derive(Serialize)]
struct SweepPoint {
    gamma_min: f64,
    validation_accuracy: Stat,
}

pub fn cmd_sweep_gamma(cfg: &ExperimentConfig, values: &[f64]) -> Result<(), CliError> {
    if values.is_empty() {
        return Err(CliError::config("no γ_min values given"));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
        return Err(CliError::config(format!("γ_min {v} outside (0, 1]")));
    }
    for &v in values {
        TrainConfig {
            gamma_min: v,
            ..cfg.train.clone()
        }
        .validate()
        .map_err(|e| CliError::config(e.to_string()))?;
    }
    let mut points = Vec::new();
    for &v in values {
        let mut accs = Vec::new();
        for seed in cfg.seeds() {
            let data = cfg.load_dataset(seed)?;
            let t = train(
                &data.graph,
                &TrainConfig {
                    gamma_min: v,
                    ..cfg.train_for(seed)
                },
            )?;
            accs.push(t.state.best_val_accuracy);
        }
        info!("γ_min {v}: validation accuracy {:.4}", stat(&accs).mean);
        points.push(SweepPoint {
            gamma_min: v,
            validation_accuracy: stat(&accs),
        });
    }
    // Earliest listed value wins ties.
    let best = points
        .iter()
        .fold(None::<&SweepPoint>, |b, p| match b {
            Some(b) if b.validation_accuracy.mean >= p.validation_accuracy.mean => Some(b),
            _ => Some(p),
        })
        .expect("non-empty");
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| vec![p.gamma_min.to_string(), p.validation_accuracy.mean.to_string()])
        .collect();
    write_csv(
        &cfg.output_dir.join("sweep-gamma.csv"),
        &["gamma_min", "validation_accuracy"],
        &rows,
    )?;
    info!("selected γ_min {}", best.gamma_min);
    let summary = SweepSummary {
        selected_gamma_min: best.gamma_min,
        validation_accuracy: best.validation_accuracy.mean,
        points,
    };
    write_json(&cfg.output_dir.join("sweep-gamma-summary.json"), &summary)
}

// ---------------------------------------------------------------- explore

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExploreMode {
    LabelNoise,
    SparseLabels,
}

impl ExploreMode {
    pub fn name(self) -> &'static str {
        match self {
            ExploreMode::LabelNoise => "label-noise",
            ExploreMode::SparseLabels => "sparse-labels",
        }
    }

    pub fn default_grid(self) -> Vec<f64> {
        match self {
            ExploreMode::LabelNoise => (0..=10).map(|k| k as f64 / 10.0).collect(),
            ExploreMode::SparseLabels => (1..=10).map(|k| k as f64 / 100.0).collect(),
        }
    }

    fn scenario(self, value: f64) -> Scenario {
        match self {
            ExploreMode::LabelNoise => Scenario::LabelNoise { ratio: value },
            ExploreMode::SparseLabels => Scenario::SparseLabels { rate: value },
        }
    }
}

#[derive(Serialize)]
struct ExploreRow {
    mode: &'static str,
    value: f64,
    seed: u64,
    before: Metrics,
    after: Metrics,
}

/// Test-split scores of the encoder trained under each grid value, before
/// and after retraining on its own pseudo labels.
pub fn cmd_explore(cfg: &ExperimentConfig, mode: ExploreMode, grid: &[f64]) -> Result<(), CliError> {
    if grid.is_empty() {
        return Err(CliError::config("empty grid"));
    }
    let mut detail = Vec::new();
    let mut table = Vec::new();
    for &value in grid {
        let scenario = mode.scenario(value);
        let mut cols: [Vec<f64>; 4] = Default::default();
        for seed in cfg.seeds() {
            let data = cfg.load_dataset(seed)?;
            let graph = training_graph(&data.graph, scenario, seed)?;
            let train_cfg = cfg.train_for(seed);
            let t = train(&graph, &train_cfg)?;
            let test = &graph.masks().test;
            let before = evaluate(&t.checkpoint, &graph, test, &scenario.tag())?;
            let re = retrain(&graph, &t.checkpoint, &t.hemb, &PerturbationResult::identity(&graph), &train_cfg)?;
            let after = evaluate(&re.checkpoint, &graph, test, &scenario.tag())?;
            info!(
                "{} {value} seed {seed}: {:.4} → {:.4}",
                mode.name(),
                before.accuracy,
                after.accuracy
            );
            for (c, v) in cols.iter_mut().zip([
                before.accuracy,
                before.normalized_entropy,
                after.accuracy,
                after.normalized_entropy,
            ]) {
                c.push(v);
            }
            detail.push(ExploreRow {
                mode: mode.name(),
                value,
                seed,
                before,
                after,
            });
        }
        let mut row = vec![value.to_string()];
        row.extend(cols.iter().map(|c| stat(c).mean.to_string()));
        table.push(row);
    }
    let name = format!("explore-{}", mode.name());
    write_jsonl(&cfg.output_dir.join(format!("{name}.jsonl")), &detail)?;
    write_csv(
        &cfg.output_dir.join(format!("{name}.csv")),
        &["value", "accuracy_before", "entropy_before", "accuracy_after", "entropy_after"],
        &table,
    )
}

// ---------------------------------------------------------------- export-embeddings

pub fn cmd_export_embeddings(cfg: &ExperimentConfig, checkpoint: &Path, output: Option<&Path>) -> Result<(), CliError> {
    let ck = read_checkpoint(checkpoint)?;
    let data = cfg.load_dataset(cfg.seeds()[0])?;
    ck.params.check_graph(&data.graph)?;
    let hemb = reference_embedding(&data.graph, &ck)?;
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => cfg.output_dir.join("embeddings.csv"),
    };
    write_text(&path, &embeddings_csv(&data.node_ids, &hemb))
}
