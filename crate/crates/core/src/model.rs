//! Encoder parameters, the diffusion schedule and the forward passes.
//!
//! The encoder computes, for a graph with normalized adjacency `Â` and
//! features `X`:
//!
//! ```text
//! H1     = ReLU(Â X Wh0)      μ = ReLU(Â X Wμ)      logσ = ReLU(Â X Wσ)
//! μ̄      = √Γ_t · μ           logσ̄ = √(1 − Γ_t) · logσ
//! Z      = μ̄ + ε ⊙ exp(logσ̄)
//! H_emb  = (J − Wz) ⊙ H1 + Wz ⊙ Z      (then neighbor propagation, if any)
//! H_out  = Â H_emb Wh1
//! ```
//!
//! `X W` is evaluated before `Â (·)` so both products stay sparse-dense.

use std::path::Path;
use std::sync::Arc;

use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::io::{decode_f64s, encode_f64s, write_atomic};
use crate::propagation::NeighborSelection;
use crate::rng::{derive_seed, seeded};
use crate::tensor::{DenseMatrix, SparseMatrix, Tape, Var};

/// The five learned weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct GvdnParams {
    /// `d x h`
    pub wh0: DenseMatrix,
    /// `d x h`
    pub wmu: DenseMatrix,
    /// `d x h`
    pub wsigma: DenseMatrix,
    /// `n x h`, one row per node.
    pub wz: DenseMatrix,
    /// `h x K`
    pub wh1: DenseMatrix,
}

/// Glorot (Xavier) uniform in `±√(6 / (rows + cols))`.
pub fn glorot_uniform(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let mut rng = seeded(seed);
    DenseMatrix::from_fn(rows, cols, |_, _| dist.sample(&mut rng))
}

/// He (Kaiming) normal with fan-in taken as the column count, matching the
/// usual convention for a `rows x cols` weight.
pub fn he_normal(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let std = (2.0 / cols.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    let mut rng = seeded(seed);
    DenseMatrix::from_fn(rows, cols, |_, _| dist.sample(&mut rng))
}

impl GvdnParams {
    pub fn init(d: usize, h: usize, k: usize, n: usize, seed: u64) -> Self {
        GvdnParams {
            wh0: glorot_uniform(d, h, derive_seed(seed, 10)),
            wmu: glorot_uniform(d, h, derive_seed(seed, 11)),
            wsigma: glorot_uniform(d, h, derive_seed(seed, 12)),
            wz: he_normal(n, h, derive_seed(seed, 13)),
            wh1: glorot_uniform(h, k, derive_seed(seed, 14)),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.wh0.rows()
    }

    pub fn hidden(&self) -> usize {
        self.wh0.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.wh1.cols()
    }

    pub fn num_nodes(&self) -> usize {
        self.wz.rows()
    }

    pub fn tensors(&self) -> [&DenseMatrix; 5] {
        [&self.wh0, &self.wmu, &self.wsigma, &self.wz, &self.wh1]
    }

    pub fn tensors_mut(&mut self) -> [&mut DenseMatrix; 5] {
        [
            &mut self.wh0,
            &mut self.wmu,
            &mut self.wsigma,
            &mut self.wz,
            &mut self.wh1,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Checks every shape against the graph.
    pub fn check_graph(&self, graph: &Graph) -> Result<()> {
        let (d, h, k) = (graph.feature_dim(), self.hidden(), graph.num_classes());
        let expect = [
            ("Wh0", &self.wh0, (d, h)),
            ("Wmu", &self.wmu, (d, h)),
            ("Wsigma", &self.wsigma, (d, h)),
            ("Wz", &self.wz, (graph.num_nodes(), h)),
            ("Wh1", &self.wh1, (h, k)),
        ];
        for (name, m, shape) in expect {
            if m.shape() != shape {
                return Err(Error::dim(
                    "params",
                    format!(
                        "{name} is {}x{}, graph needs {}x{}",
                        m.rows(),
                        m.cols(),
                        shape.0,
                        shape.1
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Appends `extra` He-initialized rows to `Wz` for newly added nodes.
    pub fn with_extra_nodes(&self, extra: usize, seed: u64) -> Result<Self> {
        let mut p = self.clone();
        if extra > 0 {
            let rows = he_normal(extra, self.hidden(), seed);
            p.wz = self.wz.vstack(&rows)?;
        }
        Ok(p)
    }
}

/// Linearly decaying diffusion rate `γ_t` and its running product `Γ_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleSpec", into = "ScheduleSpec")]
pub struct DiffusionSchedule {
    gamma_max: f64,
    gamma_min: f64,
    horizon: usize,
    /// `cumulative[t - 1] = Γ_t` for `t` in `1..=horizon`.
    cumulative: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleSpec {
    gamma_max: f64,
    gamma_min: f64,
    horizon: usize,
}

impl TryFrom<ScheduleSpec> for DiffusionSchedule {
    type Error = Error;
    fn try_from(s: ScheduleSpec) -> Result<Self> {
        DiffusionSchedule::new(s.gamma_max, s.gamma_min, s.horizon)
    }
}

impl From<DiffusionSchedule> for ScheduleSpec {
    fn from(s: DiffusionSchedule) -> Self {
        ScheduleSpec {
            gamma_max: s.gamma_max,
            gamma_min: s.gamma_min,
            horizon: s.horizon,
        }
    }
}

impl DiffusionSchedule {
    pub fn new(gamma_max: f64, gamma_min: f64, horizon: usize) -> Result<Self> {
        if !(0.0 < gamma_min && gamma_min <= gamma_max && gamma_max <= 1.0) {
            return Err(Error::contract(format!(
                "diffusion rates need 0 < gamma_min <= gamma_max <= 1, got {gamma_min}, {gamma_max}"
            )));
        }
        if horizon == 0 {
            return Err(Error::contract("diffusion horizon must be at least one epoch"));
        }
        let mut s = DiffusionSchedule {
            gamma_max,
            gamma_min,
            horizon,
            cumulative: Vec::with_capacity(horizon),
        };
        let mut acc = 1.0;
        for t in 1..=horizon {
            acc *= s.gamma_at(t);
            s.cumulative.push(acc);
        }
        Ok(s)
    }

    /// `γ ≡ 1`: no diffusion, `Γ_t = 1` for all `t`.
    pub fn disabled() -> Self {
        DiffusionSchedule::new(1.0, 1.0, 1).expect("valid constant schedule")
    }

    pub fn gamma_max(&self) -> f64 {
        self.gamma_max
    }

    pub fn gamma_min(&self) -> f64 {
        self.gamma_min
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `γ_t`, interpolated from `gamma_max` at `t = 1` to `gamma_min` at
    /// `t = horizon` and held at `gamma_min` afterwards. `t` is clamped to 1.
    pub fn gamma_at(&self, t: usize) -> f64 {
        let t = t.max(1);
        if t >= self.horizon {
            return self.gamma_min;
        }
        let frac = (t - 1) as f64 / (self.horizon - 1) as f64;
        self.gamma_max - (self.gamma_max - self.gamma_min) * frac
    }

    /// `Γ_t = ∏_{i=1..t} γ_i`; past the horizon the product keeps
    /// multiplying by `gamma_min`.
    pub fn cumulative_at(&self, t: usize) -> f64 {
        let t = t.max(1);
        if t <= self.horizon {
            return self.cumulative[t - 1];
        }
        let mut acc = self.cumulative[self.horizon - 1];
        for _ in self.horizon..t {
            acc *= self.gamma_min;
        }
        acc
    }
}

/// Source of the reparameterization noise `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpsilonMode {
    Sample(u64),
    Zero,
}

impl EpsilonMode {
    pub fn draw(self, rows: usize, cols: usize) -> DenseMatrix {
        match self {
            EpsilonMode::Zero => DenseMatrix::zeros(rows, cols),
            EpsilonMode::Sample(seed) => standard_normal(rows, cols, seed),
        }
    }
}

pub fn standard_normal(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = seeded(seed);
    DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

/// Values produced by one encoder pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// First-layer representation before noise mixing.
    pub h1: DenseMatrix,
    pub mu: DenseMatrix,
    pub log_sigma: DenseMatrix,
    pub mu_bar: DenseMatrix,
    pub log_sigma_bar: DenseMatrix,
    pub epsilon: DenseMatrix,
    pub z: DenseMatrix,
    /// Mixed (and, when a selection is supplied, propagated) `H1`.
    pub hemb: DenseMatrix,
    pub hout: DenseMatrix,
}

/// Parameter handles on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ParamVars {
    pub wh0: Var,
    pub wmu: Var,
    pub wsigma: Var,
    pub wz: Var,
    pub wh1: Var,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &GvdnParams) -> Self {
        ParamVars {
            wh0: tape.param(params.wh0.clone()),
            wmu: tape.param(params.wmu.clone()),
            wsigma: tape.param(params.wsigma.clone()),
            wz: tape.param(params.wz.clone()),
            wh1: tape.param(params.wh1.clone()),
        }
    }

    pub fn all(&self) -> [Var; 5] {
        [self.wh0, self.wmu, self.wsigma, self.wz, self.wh1]
    }
}

/// Tape handles for one encoder pass.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub h1: Var,
    pub mu: Var,
    pub log_sigma: Var,
    pub mu_bar: Var,
    pub log_sigma_bar: Var,
    pub epsilon: Var,
    pub z: Var,
    pub hemb: Var,
    pub hout: Var,
}

impl EncoderVars {
    pub fn output(&self, tape: &Tape) -> EncoderOutput {
        let v = |x: Var| tape.value(x).clone();
        EncoderOutput {
            h1: v(self.h1),
            mu: v(self.mu),
            log_sigma: v(self.log_sigma),
            mu_bar: v(self.mu_bar),
            log_sigma_bar: v(self.log_sigma_bar),
            epsilon: v(self.epsilon),
            z: v(self.z),
            hemb: v(self.hemb),
            hout: v(self.hout),
        }
    }
}

/// `ReLU(Â (X W))`.
pub(crate) fn graph_conv_relu(tape: &mut Tape, graph: &Graph, features: &Arc<SparseMatrix>, w: Var) -> Result<Var> {
    let xw = tape.spmm(features, w)?;
    let axw = tape.spmm(graph.normalized_adjacency(), xw)?;
    tape.relu(axw)
}

/// `Â (H W)`, the linear output layer.
pub(crate) fn graph_conv_linear(tape: &mut Tape, graph: &Graph, h: Var, w: Var) -> Result<Var> {
    let hw = tape.matmul(h, w)?;
    tape.spmm(graph.normalized_adjacency(), hw)
}

/// Records the encoder on `tape` with diffusion level `gamma_cumulative`.
pub fn encode_on_tape(
    tape: &mut Tape,
    graph: &Graph,
    pv: &ParamVars,
    gamma_cumulative: f64,
    epsilon: DenseMatrix,
    selection: Option<&NeighborSelection>,
) -> Result<EncoderVars> {
    if !(0.0..=1.0).contains(&gamma_cumulative) {
        return Err(Error::contract(format!(
            "cumulative diffusion rate {gamma_cumulative} outside [0, 1]"
        )));
    }
    let n = graph.num_nodes();
    let (wz_rows, h) = tape.value(pv.wz).shape();
    if wz_rows != n {
        return Err(Error::dim("forward", format!("Wz has {wz_rows} rows for {n} nodes")));
    }
    if epsilon.shape() != (n, h) {
        return Err(Error::dim("forward", "epsilon must be n x h"));
    }
    let x = graph.feature_csr();
    let h1 = graph_conv_relu(tape, graph, x, pv.wh0)?;
    let mu = graph_conv_relu(tape, graph, x, pv.wmu)?;
    let log_sigma = graph_conv_relu(tape, graph, x, pv.wsigma)?;

    let mu_bar = tape.scale(mu, gamma_cumulative.sqrt())?;
    let log_sigma_bar = tape.scale(log_sigma, (1.0 - gamma_cumulative).sqrt())?;
    let eps = tape.constant(epsilon);
    let sigma_bar = tape.exp(log_sigma_bar)?;
    let noise = tape.mul(eps, sigma_bar)?;
    let z = tape.add(mu_bar, noise)?;

    let ones = tape.constant(DenseMatrix::filled(n, h, 1.0));
    let keep = tape.sub(ones, pv.wz)?;
    let kept = tape.mul(keep, h1)?;
    let mixed = tape.mul(pv.wz, z)?;
    let mut hemb = tape.add(kept, mixed)?;
    if let Some(sel) = selection.filter(|s| !s.is_empty()) {
        hemb = tape.replace_rows_with_mean(hemb, sel.plan())?;
    }
    let hout = graph_conv_linear(tape, graph, hemb, pv.wh1)?;
    Ok(EncoderVars {
        h1,
        mu,
        log_sigma,
        mu_bar,
        log_sigma_bar,
        epsilon: eps,
        z,
        hemb,
        hout,
    })
}

/// One encoder pass at epoch `t` without neighbor propagation.
pub fn forward(
    graph: &Graph,
    params: &GvdnParams,
    schedule: &DiffusionSchedule,
    t: usize,
    epsilon: EpsilonMode,
) -> Result<EncoderOutput> {
    forward_with_selection(graph, params, schedule, t, epsilon, None)
}

pub fn forward_with_selection(
    graph: &Graph,
    params: &GvdnParams,
    schedule: &DiffusionSchedule,
    t: usize,
    epsilon: EpsilonMode,
    selection: Option<&NeighborSelection>,
) -> Result<EncoderOutput> {
    if t == 0 {
        return Err(Error::contract("epochs are numbered from 1"));
    }
    params.check_graph(graph)?;
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let eps = epsilon.draw(graph.num_nodes(), params.hidden());
    let vars = encode_on_tape(&mut tape, graph, &pv, schedule.cumulative_at(t), eps, selection)?;
    Ok(vars.output(&tape))
}

/// Two-layer GCN weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub wh0: DenseMatrix,
    pub wh1: DenseMatrix,
}

impl GcnParams {
    pub fn init(d: usize, h: usize, k: usize, seed: u64) -> Self {
        GcnParams {
            wh0: glorot_uniform(d, h, derive_seed(seed, 20)),
            wh1: glorot_uniform(h, k, derive_seed(seed, 21)),
        }
    }

    fn check(&self, graph: &Graph) -> Result<()> {
        if self.wh0.rows() != graph.feature_dim()
            || self.wh0.cols() != self.wh1.rows()
            || self.wh1.cols() != graph.num_classes()
        {
            return Err(Error::dim("gcn", "weights do not match the graph"));
        }
        Ok(())
    }
}

/// `Â · ReLU(Â X Wh0) · Wh1`.
pub fn gcn_forward(graph: &Graph, wh0: &DenseMatrix, wh1: &DenseMatrix) -> Result<DenseMatrix> {
    GcnParams {
        wh0: wh0.clone(),
        wh1: wh1.clone(),
    }
    .check(graph)?;
    let mut tape = Tape::new();
    let w0 = tape.constant(wh0.clone());
    let w1 = tape.constant(wh1.clone());
    let h1 = graph_conv_relu(&mut tape, graph, graph.feature_csr(), w0)?;
    let out = graph_conv_linear(&mut tape, graph, h1, w1)?;
    Ok(tape.value(out).clone())
}

/// GCN whose hidden layer is replaced by `(1 − w)·H1 + w·N(0, I)`.
pub fn noisy_gcn_forward(
    graph: &Graph,
    wh0: &DenseMatrix,
    wh1: &DenseMatrix,
    noise_weight: f64,
    seed: u64,
) -> Result<DenseMatrix> {
    check_noise_weight(noise_weight)?;
    GcnParams {
        wh0: wh0.clone(),
        wh1: wh1.clone(),
    }
    .check(graph)?;
    let mut tape = Tape::new();
    let w0 = tape.constant(wh0.clone());
    let w1 = tape.constant(wh1.clone());
    let h1 = graph_conv_relu(&mut tape, graph, graph.feature_csr(), w0)?;
    let noise = standard_normal(graph.num_nodes(), wh0.cols(), seed);
    let hidden = mix_noise(&mut tape, h1, noise_weight, noise)?;
    let out = graph_conv_linear(&mut tape, graph, hidden, w1)?;
    Ok(tape.value(out).clone())
}

pub(crate) fn check_noise_weight(w: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::contract(format!("noise weight {w} outside [0, 1]")));
    }
    Ok(())
}

/// `(1 − w)·h + w·noise`; returns `h` itself when `w = 0`.
pub(crate) fn mix_noise(tape: &mut Tape, h: Var, w: f64, noise: DenseMatrix) -> Result<Var> {
    if w == 0.0 {
        return Ok(h);
    }
    let kept = tape.scale(h, 1.0 - w)?;
    let noise = tape.constant(noise.scale(w));
    tape.add(kept, noise)
}

/// Trained parameters with the epoch and schedule needed to evaluate them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: GvdnParams,
    pub epoch: usize,
    pub schedule: DiffusionSchedule,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    d: usize,
    h: usize,
    #[serde(rename = "K")]
    k: usize,
    n: usize,
    epoch: usize,
    schedule: DiffusionSchedule,
}

#[derive(Serialize, Deserialize)]
struct CheckpointBlobs {
    wh0: String,
    wmu: String,
    wsigma: String,
    wz: String,
    wh1: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDocument {
    header: CheckpointHeader,
    weights: CheckpointBlobs,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let p = &self.params;
        let doc = CheckpointDocument {
            header: CheckpointHeader {
                d: p.feature_dim(),
                h: p.hidden(),
                k: p.num_classes(),
                n: p.num_nodes(),
                epoch: self.epoch,
                schedule: self.schedule.clone(),
            },
            weights: CheckpointBlobs {
                wh0: encode_f64s(p.wh0.data()),
                wmu: encode_f64s(p.wmu.data()),
                wsigma: encode_f64s(p.wsigma.data()),
                wz: encode_f64s(p.wz.data()),
                wh1: encode_f64s(p.wh1.data()),
            },
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CheckpointDocument = serde_json::from_str(text)?;
        let hd = &doc.header;
        let m = |blob: &str, r: usize, c: usize| -> Result<DenseMatrix> {
            DenseMatrix::from_vec(r, c, decode_f64s(blob)?)
                .map_err(|_| Error::Format(format!("weight blob does not hold {r}x{c} values")))
        };
        let params = GvdnParams {
            wh0: m(&doc.weights.wh0, hd.d, hd.h)?,
            wmu: m(&doc.weights.wmu, hd.d, hd.h)?,
            wsigma: m(&doc.weights.wsigma, hd.d, hd.h)?,
            wz: m(&doc.weights.wz, hd.n, hd.h)?,
            wh1: m(&doc.weights.wh1, hd.h, hd.k)?,
        };
        if !params.is_finite() {
            return Err(Error::Format("checkpoint holds non-finite weights".into()));
        }
        Ok(Checkpoint {
            params,
            epoch: hd.epoch,
            schedule: doc.header.schedule,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
