//! Optimization loops: encoder training, retraining after a perturbation,
//! and the plain GCN baseline used by the noise ablation.

use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::path::Path;
use std::sync::Arc;

use log::{debug, info};
use rand::{Rng as _, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::io::write_atomic;
use crate::metrics::{accuracy, evaluate, Metrics};
use crate::model::{
    check_noise_weight, encode_on_tape, forward, graph_conv_linear, graph_conv_relu, he_normal, mix_noise,
    standard_normal, Checkpoint, DiffusionSchedule, EpsilonMode, GcnParams, GvdnParams, ParamVars,
};
use crate::objectives::{
    cross_entropy_on, diffusion_loss_on, embedding_match_on, kl_gaussian_on, total_loss_on, LossVars, Phase,
};
use crate::perturbation::PerturbationResult;
use crate::propagation::{build_selection, NeighborSelection, SamplerKind};
use crate::rng::{derive_seed, seeded, Rng};
use crate::tensor::{DenseMatrix, Tape};

/// Any loss above this is treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Which nodes carry pseudo-label supervision during retraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainSupervision {
    /// Every node that also exists in the unperturbed graph.
    #[default]
    AllOriginal,
    /// Only the perturbed graph's training split.
    TrainMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub train_epochs: usize,
    /// Last epoch of retraining; retraining resumes after the checkpoint epoch.
    pub total_retrain_epochs: usize,
    pub gamma_max: f64,
    pub gamma_min: f64,
    pub lambda: [f64; 4],
    pub sampler: SamplerKind,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// `false` pins `γ ≡ 1`, so `Z = μ`.
    pub diffusion: bool,
    pub propagation: bool,
    pub retrain_supervision: RetrainSupervision,
    /// Start `Wz` at this constant instead of Glorot.
    pub initial_wz: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_units: 200,
            learning_rate: 1e-3,
            train_epochs: 200,
            total_retrain_epochs: 500,
            gamma_max: 0.9999,
            gamma_min: 0.6,
            lambda: [1.0; 4],
            sampler: SamplerKind::Major,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            diffusion: true,
            propagation: true,
            retrain_supervision: RetrainSupervision::AllOriginal,
            initial_wz: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::contract(msg));
        if self.hidden_units == 0 {
            return bad("hidden_units must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.train_epochs == 0 {
            return bad("train_epochs must be positive".into());
        }
        if self.total_retrain_epochs < self.train_epochs {
            return bad(format!(
                "total_retrain_epochs {} is below train_epochs {}",
                self.total_retrain_epochs, self.train_epochs
            ));
        }
        if self.lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return bad("loss weights must be finite and non-negative".into());
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} outside [0, 1)"));
            }
        }
        if self.adam_epsilon <= 0.0 {
            return bad("adam_epsilon must be positive".into());
        }
        if let Some(w) = self.initial_wz {
            if !w.is_finite() {
                return bad("initial_wz must be finite".into());
            }
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        if self.diffusion {
            DiffusionSchedule::new(self.gamma_max, self.gamma_min, self.train_epochs)
        } else {
            Ok(DiffusionSchedule::disabled())
        }
    }

    fn adam(&self) -> AdamState {
        AdamState::new(self.learning_rate, self.adam_beta1, self.adam_beta2, self.adam_epsilon)
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
}

impl AdamState {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. Moments are created lazily on the first
    /// step, so the same state must always see the same tensor list.
    pub fn step(&mut self, params: &mut [&mut DenseMatrix], grads: &[&DenseMatrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim("adam", "one gradient per parameter required"));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| DenseMatrix::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::dim("adam", "parameter count changed between steps"));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.m[i].shape() != p.shape() {
                return Err(Error::dim("adam", format!("tensor {i} changed shape")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// One line of the loss history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub ce: f64,
    pub kl: f64,
    pub df: f64,
    /// Absent outside retraining.
    pub nm: Option<f64>,
    pub val_accuracy: f64,
}

/// Renders the history as `epoch,ce,kl,df,nm,val_acc` CSV.
pub fn loss_history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,ce,kl,df,nm,val_acc\n");
    for r in history {
        let nm = r.nm.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{},{},{}", r.epoch, r.ce, r.kl, r.df, nm, r.val_accuracy);
    }
    s
}

pub fn write_loss_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    write_atomic(path.as_ref(), loss_history_csv(history).as_bytes())
}

/// Mutable state of an optimization run.
#[derive(Debug, Clone)]
pub struct TrainState {
    /// Last completed epoch.
    pub epoch: usize,
    pub params: GvdnParams,
    pub adam: AdamState,
    pub best_val_accuracy: f64,
    pub best: Checkpoint,
    pub history: Vec<EpochRecord>,
    /// Selection computed from the previous epoch's predictions.
    pub pending_selection: NeighborSelection,
}

/// Fixed inputs of an optimization loop.
struct LoopSpec<'a> {
    graph: &'a Graph,
    supervision: &'a [Option<usize>],
    supervision_mask: Vec<bool>,
    validation: &'a [Option<usize>],
    validation_mask: Vec<bool>,
    schedule: DiffusionSchedule,
    config: &'a TrainConfig,
    phase: Phase,
    reference: Option<(&'a DenseMatrix, Vec<(usize, usize)>)>,
}

fn as_divergence(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(op) => Error::Divergence {
            epoch,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

fn check_loss(epoch: usize, name: &str, value: f64) -> Result<()> {
    if !value.is_finite() || value.abs() > DIVERGENCE_LIMIT {
        return Err(Error::Divergence {
            epoch,
            detail: format!("{name} loss is {value}"),
        });
    }
    Ok(())
}

fn validation_accuracy(spec: &LoopSpec<'_>, params: &GvdnParams, epoch: usize) -> Result<f64> {
    let out = forward(spec.graph, params, &spec.schedule, epoch, EpsilonMode::Zero)?;
    accuracy(&out.hout.argmax_rows(), spec.validation, &spec.validation_mask)
}

fn run_epochs(spec: &LoopSpec<'_>, state: &mut TrainState, epochs: RangeInclusive<usize>, rng: &mut Rng) -> Result<()> {
    let cfg = spec.config;
    for t in epochs {
        let mut tape = Tape::new();
        let pv = ParamVars::register(&mut tape, &state.params);
        let eps = standard_normal(spec.graph.num_nodes(), state.params.hidden(), rng.next_u64());
        let selection = cfg.propagation.then_some(&state.pending_selection);
        let gamma = spec.schedule.cumulative_at(t);
        let step = |tape: &mut Tape| -> Result<_> {
            let vars = encode_on_tape(tape, spec.graph, &pv, gamma, eps, selection)?;
            let ce = cross_entropy_on(tape, vars.hout, spec.supervision, &spec.supervision_mask)?;
            let kl = kl_gaussian_on(tape, vars.mu, vars.log_sigma)?;
            let df = diffusion_loss_on(tape, vars.epsilon, vars.z)?;
            let nm = match &spec.reference {
                Some((reference, pairs)) => Some(embedding_match_on(tape, reference, vars.hemb, pairs)?),
                None => None,
            };
            let parts = LossVars { ce, kl, df, nm };
            let total = total_loss_on(tape, &parts, cfg.lambda, spec.phase)?;
            Ok((vars, parts, total))
        };
        let (vars, parts, total) = step(&mut tape).map_err(as_divergence(t))?;
        let losses = parts.values(&tape, cfg.lambda);
        for (name, v) in [
            ("ce", losses.ce),
            ("kl", losses.kl),
            ("df", losses.df),
            ("nm", losses.nm),
            ("total", tape.scalar(total)),
        ] {
            check_loss(t, name, v)?;
        }

        if cfg.propagation {
            let predicted = tape.value(vars.hout).argmax_rows();
            state.pending_selection = build_selection(
                spec.graph,
                &predicted,
                spec.supervision,
                &spec.supervision_mask,
                cfg.sampler,
                t,
                rng,
            );
        }

        let mut grads = tape.backward(total).map_err(as_divergence(t))?;
        let grads: Vec<DenseMatrix> = pv
            .all()
            .iter()
            .map(|&v| grads.take(v).expect("parameters are on the tape"))
            .collect();
        drop(tape);
        let grad_refs: Vec<&DenseMatrix> = grads.iter().collect();
        state.adam.step(&mut state.params.tensors_mut(), &grad_refs)?;
        if !state.params.is_finite() {
            return Err(Error::Divergence {
                epoch: t,
                detail: "parameters became non-finite".into(),
            });
        }
        state.epoch = t;

        let val = validation_accuracy(spec, &state.params, t).map_err(as_divergence(t))?;
        if val > state.best_val_accuracy {
            state.best_val_accuracy = val;
            state.best = Checkpoint {
                params: state.params.clone(),
                epoch: t,
                schedule: spec.schedule.clone(),
            };
        }
        state.history.push(EpochRecord {
            epoch: t,
            ce: losses.ce,
            kl: losses.kl,
            df: losses.df,
            nm: parts.nm.map(|_| losses.nm),
            val_accuracy: val,
        });
        debug!(
            "epoch {t}: ce {:.4} kl {:.4} df {:.4} nm {:.4} val {:.4}",
            losses.ce, losses.kl, losses.df, losses.nm, val
        );
    }
    Ok(())
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the best validation accuracy.
    pub checkpoint: Checkpoint,
    /// `Hemb` of the best checkpoint with `ε = 0`; the retraining reference.
    pub hemb: DenseMatrix,
    /// Predictions of the best checkpoint with `ε = 0`.
    pub predictions: Vec<usize>,
    pub state: TrainState,
}

/// Trains the encoder on the graph's training split, selecting the epoch
/// with the best validation accuracy (earliest on ties).
pub fn train(graph: &Graph, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let schedule = config.schedule()?;
    let n = graph.num_nodes();
    let mut params = GvdnParams::init(
        graph.feature_dim(),
        config.hidden_units,
        graph.num_classes(),
        n,
        config.seed,
    );
    if let Some(w) = config.initial_wz {
        params.wz = DenseMatrix::filled(n, config.hidden_units, w);
    }
    let masks = graph.masks();
    let spec = LoopSpec {
        graph,
        supervision: graph.labels(),
        supervision_mask: masks.train.clone(),
        validation: graph.labels(),
        validation_mask: masks.validation.clone(),
        schedule: schedule.clone(),
        config,
        phase: Phase::Training,
        reference: None,
    };
    // Fail on missing labels before spending an epoch.
    crate::objectives::supervised_targets(spec.supervision, &spec.supervision_mask)?;
    let mut state = TrainState {
        epoch: 0,
        best: Checkpoint {
            params: params.clone(),
            epoch: 1,
            schedule: schedule.clone(),
        },
        params,
        adam: config.adam(),
        best_val_accuracy: f64::NEG_INFINITY,
        history: Vec::new(),
        pending_selection: NeighborSelection::default(),
    };
    let mut rng = seeded(derive_seed(config.seed, 100));
    run_epochs(&spec, &mut state, 1..=config.train_epochs, &mut rng)?;
    let checkpoint = state.best.clone();
    let out = forward(graph, &checkpoint.params, &schedule, checkpoint.epoch, EpsilonMode::Zero)?;
    info!(
        "trained {} epochs; best validation accuracy {:.4} at epoch {}",
        config.train_epochs, state.best_val_accuracy, checkpoint.epoch
    );
    Ok(TrainOutcome {
        checkpoint,
        predictions: out.hout.argmax_rows(),
        hemb: out.hemb,
        state,
    })
}

fn check_node_map(node_map: &[usize], reference_rows: usize, perturbed_nodes: usize) -> Result<()> {
    if node_map.len() != reference_rows {
        return Err(Error::contract(format!(
            "node map covers {} nodes, reference embedding has {}",
            node_map.len(),
            reference_rows
        )));
    }
    let mut seen = vec![false; perturbed_nodes];
    for (i, &j) in node_map.iter().enumerate() {
        if j >= perturbed_nodes {
            return Err(Error::contract(format!("node {i} maps outside the perturbed graph")));
        }
        if std::mem::replace(&mut seen[j], true) {
            return Err(Error::contract(format!("two nodes map onto perturbed node {j}")));
        }
    }
    Ok(())
}

/// Moves `Wz` rows to their perturbed positions; unmapped rows come from `fill`.
fn remap_wz(wz: &DenseMatrix, node_map: &[usize], perturbed_nodes: usize, fill: DenseMatrix) -> Result<DenseMatrix> {
    let h = wz.cols();
    let unmapped = perturbed_nodes - node_map.len();
    if fill.shape() != (unmapped, h) {
        return Err(Error::dim("remap_wz", "fill rows must cover the unmapped nodes"));
    }
    let mut out = DenseMatrix::zeros(perturbed_nodes, h);
    let mut mapped = vec![false; perturbed_nodes];
    for (i, &j) in node_map.iter().enumerate() {
        out.row_mut(j).copy_from_slice(wz.row(i));
        mapped[j] = true;
    }
    let free = mapped.iter().enumerate().filter(|(_, &m)| !m).map(|(j, _)| j);
    for (r, j) in free.enumerate() {
        out.row_mut(j).copy_from_slice(fill.row(r));
    }
    Ok(out)
}

/// Pseudo labels for every node of the perturbed graph.
///
/// Mapped nodes reuse their reference embedding; unmapped (injected) nodes
/// take their row from an `ε = 0` pass of the trained encoder with zero
/// noise-mixing weights. Labels are the argmax of `Â (H Wh1)`.
pub fn pseudo_labels(
    checkpoint: &Checkpoint,
    perturbed: &Graph,
    reference: &DenseMatrix,
    node_map: &[usize],
) -> Result<Vec<usize>> {
    let n2 = perturbed.num_nodes();
    check_node_map(node_map, reference.rows(), n2)?;
    let params = &checkpoint.params;
    if reference.cols() != params.hidden() {
        return Err(Error::dim("pseudo_labels", "reference width differs from hidden size"));
    }
    let mut h = if node_map.len() < n2 {
        let mut p = params.clone();
        let zeros = DenseMatrix::zeros(n2 - node_map.len(), p.hidden());
        p.wz = remap_wz(&p.wz, node_map, n2, zeros)?;
        forward(perturbed, &p, &checkpoint.schedule, checkpoint.epoch.max(1), EpsilonMode::Zero)?.hemb
    } else {
        DenseMatrix::zeros(n2, params.hidden())
    };
    for (i, &j) in node_map.iter().enumerate() {
        h.row_mut(j).copy_from_slice(reference.row(i));
    }
    let mut tape = Tape::new();
    let hv = tape.constant(h);
    let w1 = tape.constant(params.wh1.clone());
    let logits = graph_conv_linear(&mut tape, perturbed, hv, w1)?;
    Ok(tape.value(logits).argmax_rows())
}

/// Victim-node scores around a retraining run, all against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Trained encoder on the unperturbed graph.
    pub clean: Metrics,
    /// Trained encoder applied to the perturbed graph.
    pub perturbed: Metrics,
    /// Retrained encoder on the perturbed graph.
    pub recovered: Metrics,
}

#[derive(Debug, Clone)]
pub struct RetrainOutcome {
    pub checkpoint: Checkpoint,
    pub pseudo_labels: Vec<usize>,
    pub report: RecoveryReport,
    pub state: TrainState,
}

/// Fine-tunes a trained encoder on a perturbed graph.
///
/// Supervision comes only from pseudo labels and the reference embedding;
/// the perturbed graph's own labels are stripped before optimization and
/// used solely to score the victims afterwards. Optimizer moments restart
/// from zero.
pub fn retrain(
    original: &Graph,
    checkpoint: &Checkpoint,
    reference: &DenseMatrix,
    perturbation: &PerturbationResult,
    config: &TrainConfig,
) -> Result<RetrainOutcome> {
    config.validate()?;
    let perturbed = &perturbation.graph;
    let n2 = perturbed.num_nodes();
    checkpoint.params.check_graph(original)?;
    check_node_map(&perturbation.node_map, original.num_nodes(), n2)?;
    if checkpoint.epoch == 0 {
        return Err(Error::contract("retraining needs a checkpoint from a completed epoch"));
    }
    let start_epoch = checkpoint.epoch;
    if start_epoch >= config.total_retrain_epochs {
        return Err(Error::contract(format!(
            "checkpoint epoch {start_epoch} leaves no retraining epochs before {}",
            config.total_retrain_epochs
        )));
    }

    let pseudo = pseudo_labels(checkpoint, perturbed, reference, &perturbation.node_map)?;
    let pseudo_opt: Vec<Option<usize>> = pseudo.iter().copied().map(Some).collect();

    // Disabling diffusion pins Γ to 1 for the retraining epochs only.
    let schedule = if config.diffusion {
        checkpoint.schedule.clone()
    } else {
        DiffusionSchedule::disabled()
    };
    let mut params = checkpoint.params.clone();
    let unmapped = n2 - perturbation.node_map.len();
    let fill = he_normal(unmapped, params.hidden(), derive_seed(config.seed, 210));
    params.wz = remap_wz(&params.wz, &perturbation.node_map, n2, fill)?;
    let start = Checkpoint {
        params: params.clone(),
        epoch: start_epoch,
        schedule: checkpoint.schedule.clone(),
    };

    let victims = perturbation.victim_mask();
    let report_clean = {
        let mut mask = vec![false; original.num_nodes()];
        for (i, &j) in perturbation.node_map.iter().enumerate() {
            mask[i] = victims[j];
        }
        evaluate(checkpoint, original, &mask, "clean")?
    };
    let report_perturbed = evaluate(&start, perturbed, &victims, "perturbed")?;

    let supervision_mask = match config.retrain_supervision {
        RetrainSupervision::AllOriginal => {
            let mut m = vec![false; n2];
            for &j in &perturbation.node_map {
                m[j] = true;
            }
            m
        }
        RetrainSupervision::TrainMask => perturbed.masks().train.clone(),
    };
    let blind = perturbed.without_labels();
    let spec = LoopSpec {
        graph: &blind,
        supervision: &pseudo_opt,
        supervision_mask,
        validation: &pseudo_opt,
        validation_mask: perturbed.masks().validation.clone(),
        schedule: schedule.clone(),
        config,
        phase: Phase::Retraining,
        reference: Some((reference, perturbation.pairs())),
    };
    let start_val = validation_accuracy(&spec, &params, start_epoch)?;
    let start = Checkpoint { schedule, ..start };
    let mut state = TrainState {
        epoch: start_epoch,
        params,
        adam: config.adam(),
        best_val_accuracy: start_val,
        best: start,
        history: Vec::new(),
        pending_selection: NeighborSelection::default(),
    };
    let mut rng = seeded(derive_seed(config.seed, 200));
    run_epochs(&spec, &mut state, start_epoch + 1..=config.total_retrain_epochs, &mut rng)?;

    let best = state.best.clone();
    let recovered = evaluate(&best, perturbed, &victims, "recovered")?;
    info!(
        "victims: clean {:.4}, perturbed {:.4}, recovered {:.4}",
        report_clean.accuracy, report_perturbed.accuracy, recovered.accuracy
    );
    Ok(RetrainOutcome {
        checkpoint: best,
        pseudo_labels: pseudo,
        report: RecoveryReport {
            clean: report_clean,
            perturbed: report_perturbed,
            recovered,
        },
        state,
    })
}

/// Settings for the two-layer GCN baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcnConfig {
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Dropout on input features and on the hidden layer.
    pub dropout: f64,
    /// Weight of the Gaussian noise mixed into the hidden layer.
    pub noise_weight: f64,
    pub seed: u64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        GcnConfig {
            hidden_units: 200,
            learning_rate: 1e-3,
            epochs: 200,
            dropout: 0.5,
            noise_weight: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GcnOutcome {
    pub params: GcnParams,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut Rng) -> DenseMatrix {
    let keep = 1.0 / (1.0 - p);
    DenseMatrix::from_fn(rows, cols, |_, _| if rng.random::<f64>() < p { 0.0 } else { keep })
}

/// Trains the (optionally noisy) GCN baseline with dropout, keeping the
/// epoch with the best validation accuracy. Validation uses noise but no
/// dropout.
pub fn train_gcn(graph: &Graph, config: &GcnConfig) -> Result<GcnOutcome> {
    check_noise_weight(config.noise_weight)?;
    if !(0.0..1.0).contains(&config.dropout) {
        return Err(Error::contract(format!("dropout {} outside [0, 1)", config.dropout)));
    }
    if config.epochs == 0 || config.hidden_units == 0 {
        return Err(Error::contract("epochs and hidden_units must be positive"));
    }
    let (n, h) = (graph.num_nodes(), config.hidden_units);
    let mut params = GcnParams::init(graph.feature_dim(), h, graph.num_classes(), config.seed);
    let mut adam = AdamState::new(config.learning_rate, 0.9, 0.999, 1e-8);
    let mut rng = seeded(derive_seed(config.seed, 300));
    let masks = graph.masks();
    let x = graph.feature_csr();
    let mut best = (params.clone(), 0usize, f64::NEG_INFINITY);
    for t in 1..=config.epochs {
        let mut tape = Tape::new();
        let w0 = tape.param(params.wh0.clone());
        let w1 = tape.param(params.wh1.clone());
        let features = if config.dropout > 0.0 {
            let keep = 1.0 / (1.0 - config.dropout);
            let vals = x
                .values()
                .iter()
                .map(|&v| if rng.random::<f64>() < config.dropout { 0.0 } else { v * keep })
                .collect();
            Arc::new(x.with_values(vals)?)
        } else {
            Arc::clone(x)
        };
        let h1 = graph_conv_relu(&mut tape, graph, &features, w0)?;
        let mut hidden = if config.dropout > 0.0 {
            let m = tape.constant(dropout_mask(n, h, config.dropout, &mut rng));
            tape.mul(h1, m)?
        } else {
            h1
        };
        let noise = standard_normal(n, h, rng.next_u64());
        hidden = mix_noise(&mut tape, hidden, config.noise_weight, noise)?;
        let out = graph_conv_linear(&mut tape, graph, hidden, w1)?;
        let loss = cross_entropy_on(&mut tape, out, graph.labels(), &masks.train).map_err(as_divergence(t))?;
        check_loss(t, "ce", tape.scalar(loss))?;
        let mut g = tape.backward(loss)?;
        let (g0, g1) = (g.take(w0).expect("param"), g.take(w1).expect("param"));
        drop(tape);
        adam.step(&mut [&mut params.wh0, &mut params.wh1], &[&g0, &g1])?;

        let logits = gcn_eval_logits(graph, &params, config.noise_weight, derive_seed(config.seed, 301))?;
        let val = accuracy(&logits.argmax_rows(), graph.labels(), &masks.validation)?;
        if val > best.2 {
            best = (params.clone(), t, val);
        }
    }
    Ok(GcnOutcome {
        params: best.0,
        best_epoch: best.1,
        best_val_accuracy: best.2,
    })
}

/// Baseline logits at evaluation time: noise mixed in, no dropout.
pub fn gcn_eval_logits(graph: &Graph, params: &GcnParams, noise_weight: f64, seed: u64) -> Result<DenseMatrix> {
    crate::model::noisy_gcn_forward(graph, &params.wh0, &params.wh1, noise_weight, seed)
}
