//! Structure and label perturbations.
//!
//! Victims are always the validation ∪ test nodes of the input graph.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{indices, Graph, SplitMasks};
use crate::io::write_atomic;
use crate::rng::seeded;
use crate::tensor::DenseMatrix;

/// Fraction of victim-incident edges removed by [`sparsify_info`].
pub const SPARSIFY_LINK_FRACTION: f64 = 0.9;

/// Perturbation scenario with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    Clean,
    RandomPerturb { p_rdm: f64 },
    InfoSparse,
    LabelNoise { ratio: f64 },
    SparseLabels { rate: f64 },
}

impl Scenario {
    pub fn tag(&self) -> String {
        match self {
            Scenario::Clean => "clean".into(),
            Scenario::RandomPerturb { p_rdm } => format!("rdmPert({p_rdm})"),
            Scenario::InfoSparse => "infoSparse".into(),
            Scenario::LabelNoise { ratio } => format!("labelNoise({ratio})"),
            Scenario::SparseLabels { rate } => format!("sparseLabels({rate})"),
        }
    }
}

/// Features given to injected perturbator nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectedFeatures {
    /// Copy the feature row of a uniformly chosen existing node.
    #[default]
    CopyExisting,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationResult {
    pub graph: Graph,
    /// `node_map[original] = perturbed id`.
    pub node_map: Vec<usize>,
    /// Victims, in perturbed-graph ids.
    pub victim_ids: Vec<usize>,
    pub injected_ids: Vec<usize>,
    pub scenario: Scenario,
}

impl PerturbationResult {
    /// The unperturbed graph under the identity map.
    pub fn identity(graph: &Graph) -> Self {
        PerturbationResult {
            graph: graph.clone(),
            node_map: (0..graph.num_nodes()).collect(),
            victim_ids: indices(&graph.masks().victim_mask()),
            injected_ids: Vec::new(),
            scenario: Scenario::Clean,
        }
    }

    /// `(original, perturbed)` pairs.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.node_map.iter().copied().enumerate().collect()
    }

    /// Victim membership over the perturbed graph's nodes.
    pub fn victim_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.graph.num_nodes()];
        for &v in &self.victim_ids {
            m[v] = true;
        }
        m
    }

    pub fn write(&self, graph_path: impl AsRef<Path>, sidecar_path: impl AsRef<Path>) -> Result<()> {
        self.graph.write_json(graph_path)?;
        let side = Sidecar {
            node_map: self.node_map.clone(),
            victim_ids: self.victim_ids.clone(),
            injected_ids: self.injected_ids.clone(),
            scenario: self.scenario,
        };
        write_atomic(sidecar_path, serde_json::to_string(&side)?.as_bytes())
    }

    pub fn read(graph_path: impl AsRef<Path>, sidecar_path: impl AsRef<Path>) -> Result<Self> {
        let graph = Graph::read_json(graph_path)?;
        let sidecar_path = sidecar_path.as_ref();
        let text = std::fs::read_to_string(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?;
        let side: Sidecar = serde_json::from_str(&text)?;
        let n = graph.num_nodes();
        if side.node_map.iter().chain(&side.victim_ids).chain(&side.injected_ids).any(|&i| i >= n) {
            return Err(Error::Format("sidecar references nodes outside the graph".into()));
        }
        Ok(PerturbationResult {
            graph,
            node_map: side.node_map,
            victim_ids: side.victim_ids,
            injected_ids: side.injected_ids,
            scenario: side.scenario,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    node_map: Vec<usize>,
    victim_ids: Vec<usize>,
    injected_ids: Vec<usize>,
    scenario: Scenario,
}

/// Injects `round(p_rdm·|victims|)` perturbator nodes, each connected to
/// `min(round(1/p_rdm), |victims|)` distinct uniformly chosen victims.
/// Injected nodes carry no label and join no split.
pub fn random_perturb(graph: &Graph, p_rdm: f64, seed: u64, features: InjectedFeatures) -> Result<PerturbationResult> {
    if !(p_rdm > 0.0 && p_rdm <= 1.0) {
        return Err(Error::contract(format!("p_rdm must lie in (0, 1], got {p_rdm}")));
    }
    let n = graph.num_nodes();
    let victims = indices(&graph.masks().victim_mask());
    let n_inject = (p_rdm * victims.len() as f64).round() as usize;
    let per_node = ((1.0 / p_rdm).round() as usize).min(victims.len());
    let mut rng = seeded(seed);

    let mut edges = graph.edges();
    let mut rows = Vec::with_capacity(n_inject);
    let injected_ids: Vec<usize> = (n..n + n_inject).collect();
    for &new_id in &injected_ids {
        for k in index::sample(&mut rng, victims.len(), per_node) {
            edges.push((victims[k], new_id));
        }
        rows.push(match features {
            InjectedFeatures::CopyExisting => graph.features().row(rng.random_range(0..n)).to_vec(),
            InjectedFeatures::Zero => vec![0.0; graph.feature_dim()],
        });
    }
    let extra = if rows.is_empty() {
        DenseMatrix::zeros(0, graph.feature_dim())
    } else {
        DenseMatrix::from_rows(&rows)?
    };
    let features = graph.features().vstack(&extra)?;
    let mut labels = graph.labels().to_vec();
    labels.resize(n + n_inject, None);
    let perturbed = Graph::from_edges(
        n + n_inject,
        &edges,
        features,
        labels,
        graph.num_classes(),
        graph.masks().extended(n_inject),
    )?;
    Ok(PerturbationResult {
        graph: perturbed,
        node_map: (0..n).collect(),
        victim_ids: victims,
        injected_ids,
        scenario: Scenario::RandomPerturb { p_rdm },
    })
}

/// Removes 90% of the edges incident to a victim (sampled globally without
/// replacement) and zeroes every victim feature row.
pub fn sparsify_info(graph: &Graph, seed: u64) -> Result<PerturbationResult> {
    let victim = graph.masks().victim_mask();
    let (eligible, safe): (Vec<_>, Vec<_>) = graph
        .edges()
        .into_iter()
        .partition(|&(i, j)| victim[i] || victim[j]);
    let keep = ((1.0 - SPARSIFY_LINK_FRACTION) * eligible.len() as f64).round() as usize;
    let mut rng = seeded(seed);
    let mut edges = safe;
    edges.extend(
        index::sample(&mut rng, eligible.len(), keep)
            .into_iter()
            .map(|k| eligible[k]),
    );
    let mut features = graph.features().clone();
    for (i, _) in victim.iter().enumerate().filter(|(_, &v)| v) {
        features.row_mut(i).fill(0.0);
    }
    let n = graph.num_nodes();
    let perturbed = Graph::from_edges(
        n,
        &edges,
        features,
        graph.labels().to_vec(),
        graph.num_classes(),
        graph.masks().clone(),
    )?;
    Ok(PerturbationResult {
        graph: perturbed,
        node_map: (0..n).collect(),
        victim_ids: indices(&victim),
        injected_ids: Vec::new(),
        scenario: Scenario::InfoSparse,
    })
}

/// Replaces the label of `round(noise_ratio·|mask|)` masked nodes with a
/// uniform draw over the other classes.
pub fn inject_label_noise(
    labels: &[Option<usize>],
    mask: &[bool],
    noise_ratio: f64,
    num_classes: usize,
    seed: u64,
) -> Result<Vec<Option<usize>>> {
    if !(0.0..=1.0).contains(&noise_ratio) {
        return Err(Error::contract(format!("noise ratio {noise_ratio} outside [0, 1]")));
    }
    if labels.len() != mask.len() {
        return Err(Error::dim("inject_label_noise", "labels and mask differ in length"));
    }
    let candidates: Vec<usize> = indices(mask).into_iter().filter(|&i| labels[i].is_some()).collect();
    let count = (noise_ratio * candidates.len() as f64).round() as usize;
    if count > 0 && num_classes < 2 {
        return Err(Error::contract("label noise needs at least two classes"));
    }
    let mut rng = seeded(seed);
    let mut out = labels.to_vec();
    for k in index::sample(&mut rng, candidates.len(), count) {
        let i = candidates[k];
        let old = labels[i].expect("filtered to labeled nodes");
        let mut new = rng.random_range(0..num_classes - 1);
        if new >= old {
            new += 1;
        }
        out[i] = Some(new);
    }
    Ok(out)
}

/// Shrinks the train mask to `round(label_rate·n)` former train nodes
/// (capped at the current train size). Dropped nodes join no split.
pub fn subsample_train_mask(masks: &SplitMasks, label_rate: f64, seed: u64) -> Result<SplitMasks> {
    if !(label_rate > 0.0 && label_rate <= 1.0) {
        return Err(Error::contract(format!("label rate {label_rate} outside (0, 1]")));
    }
    let mut train = masks.train_ids();
    let target = ((label_rate * masks.len() as f64).round() as usize).min(train.len());
    if target == 0 {
        return Err(Error::contract("label rate leaves no train node"));
    }
    train.shuffle(&mut seeded(seed));
    let mut out = masks.clone();
    out.train.fill(false);
    for &i in &train[..target] {
        out.train[i] = true;
    }
    Ok(out)
}
