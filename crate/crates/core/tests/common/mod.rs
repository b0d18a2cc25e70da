#![allow(dead_code)]

use std::collections::BTreeMap;

use gvdn::graph::{Graph, SplitMasks};
use gvdn::model::{encode_on_tape, standard_normal, GvdnParams, ParamVars};
use gvdn::objectives::{
    cross_entropy_on, diffusion_loss_on, embedding_match_on, kl_gaussian_on, total_loss_on, LossVars, Phase,
};
use gvdn::propagation::NeighborSelection;
use gvdn::tensor::{DenseMatrix, Tape};

pub fn masks(n: usize, train: &[usize], val: &[usize], test: &[usize]) -> SplitMasks {
    let mut m = SplitMasks::empty(n);
    for &i in train {
        m.train[i] = true;
    }
    for &i in val {
        m.validation[i] = true;
    }
    for &i in test {
        m.test[i] = true;
    }
    m
}

/// Two triangles joined by an edge, with mixed-sign features.
pub fn six_node_graph() -> Graph {
    let edges = [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5), (5, 3)];
    let features = DenseMatrix::from_rows(&[
        [1.0, 0.5, 0.0, 0.2],
        [0.8, 0.0, 0.1, 0.0],
        [0.6, 0.3, 0.4, 0.1],
        [0.0, 0.2, 0.9, 0.7],
        [0.1, 0.0, 0.8, 1.0],
        [0.0, 0.4, 0.6, 0.9],
    ])
    .unwrap();
    let labels = vec![Some(0), Some(0), Some(0), Some(1), Some(1), Some(1)];
    Graph::from_edges(6, &edges, features, labels, 2, masks(6, &[0, 3], &[1, 4], &[2, 5])).unwrap()
}

pub fn path_graph(n: usize) -> Graph {
    let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    let features = DenseMatrix::from_fn(n, 3, |i, j| ((i + 2 * j) % 4) as f64 * 0.25);
    let labels = (0..n).map(|i| Some(i % 2)).collect();
    let val: Vec<usize> = (0..n).filter(|i| i % 3 == 1).collect();
    let test: Vec<usize> = (0..n).filter(|i| i % 3 == 2).collect();
    let train: Vec<usize> = (0..n).filter(|i| i % 3 == 0).collect();
    Graph::from_edges(n, &edges, features, labels, 2, masks(n, &train, &val, &test)).unwrap()
}

/// Everything except the parameters that the full loss depends on.
pub struct LossFixture {
    pub graph: Graph,
    pub gamma: f64,
    pub epsilon: DenseMatrix,
    pub selection: NeighborSelection,
    pub reference: DenseMatrix,
    pub pairs: Vec<(usize, usize)>,
    pub lambda: [f64; 4],
}

impl LossFixture {
    pub fn new(hidden: usize) -> Self {
        let graph = six_node_graph();
        let n = graph.num_nodes();
        let mut entries = BTreeMap::new();
        entries.insert(2, vec![0, 1]);
        entries.insert(4, vec![3]);
        LossFixture {
            graph,
            gamma: 0.7,
            epsilon: standard_normal(n, hidden, 11),
            selection: NeighborSelection::new(1, entries),
            reference: standard_normal(n, hidden, 12).map(|v| 0.5 * v.abs()),
            pairs: (0..n).map(|i| (i, i)).collect(),
            lambda: [1.0, 0.5, 2.0, 1.5],
        }
    }

    /// Full weighted loss and its gradients (in `GvdnParams::tensors` order).
    pub fn loss_and_grads(&self, params: &GvdnParams, phase: Phase) -> (f64, Vec<DenseMatrix>) {
        let mut tape = Tape::new();
        let pv = ParamVars::register(&mut tape, params);
        let vars = encode_on_tape(
            &mut tape,
            &self.graph,
            &pv,
            self.gamma,
            self.epsilon.clone(),
            Some(&self.selection),
        )
        .unwrap();
        let g = &self.graph;
        let ce = cross_entropy_on(&mut tape, vars.hout, g.labels(), &g.masks().train).unwrap();
        let kl = kl_gaussian_on(&mut tape, vars.mu, vars.log_sigma).unwrap();
        let df = diffusion_loss_on(&mut tape, vars.epsilon, vars.z).unwrap();
        let nm = embedding_match_on(&mut tape, &self.reference, vars.hemb, &self.pairs).unwrap();
        let parts = LossVars {
            ce,
            kl,
            df,
            nm: Some(nm),
        };
        let total = total_loss_on(&mut tape, &parts, self.lambda, phase).unwrap();
        let grads = tape.backward(total).unwrap();
        let grads = pv.all().iter().map(|&v| grads.get(v).unwrap().clone()).collect();
        (tape.scalar(total), grads)
    }
}

/// Parameters whose pre-activations sit well away from the ReLU kink.
pub fn fixture_params(hidden: usize, seed: u64) -> GvdnParams {
    let g = six_node_graph();
    GvdnParams::init(g.feature_dim(), hidden, g.num_classes(), g.num_nodes(), seed)
}

/// `|a − n| ≤ max(rel · max(|a|, |n|), floor)`.
pub fn close(analytic: f64, numeric: f64, rel: f64, floor: f64) -> bool {
    (analytic - numeric).abs() <= (rel * analytic.abs().max(numeric.abs())).max(floor)
}

/// Worst relative mismatch between analytic and central-difference
/// gradients over every parameter entry, and the number of failing entries.
pub fn gradient_check(fixture: &LossFixture, params: &GvdnParams, phase: Phase, step: f64) -> (usize, usize, f64) {
    let (_, analytic) = fixture.loss_and_grads(params, phase);
    let mut failures = 0;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for (t, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let mut plus = params.clone();
            plus.tensors_mut()[t].data_mut()[k] += step;
            let mut minus = params.clone();
            minus.tensors_mut()[t].data_mut()[k] -= step;
            let numeric =
                (fixture.loss_and_grads(&plus, phase).0 - fixture.loss_and_grads(&minus, phase).0) / (2.0 * step);
            let a = grad.data()[k];
            checked += 1;
            if !close(a, numeric, 1e-4, 1e-8) {
                failures += 1;
            }
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    (checked, failures, worst)
}

/// Means of consecutive 10-epoch windows ending at each multiple of 10 in
/// `[first_end, last_end]` (1-based epoch positions within `values`).
pub fn window_means(values: &[f64], first_end: usize, last_end: usize) -> Vec<f64> {
    (first_end..=last_end)
        .step_by(10)
        .filter(|&e| e >= 10 && e <= values.len())
        .map(|e| values[e - 10..e].iter().sum::<f64>() / 10.0)
        .collect()
}

pub fn non_increasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0])
}
