//! Topology-based neighbor selection for inaccurately predicted nodes and
//! the embedding propagation that consumes it one epoch later.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::Graph;
use crate::tensor::{DenseMatrix, RowMean, Tape};

/// Rule for drawing a label from a node's neighborhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    /// Uniform over the neighbors' predicted labels.
    Random,
    /// Most frequent neighbor label, lowest class id on ties.
    #[default]
    Major,
    /// Neighbor labels weighted by the neighbor's degree.
    Degree,
}

impl std::str::FromStr for SamplerKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random" => Ok(SamplerKind::Random),
            "major" => Ok(SamplerKind::Major),
            "degree" => Ok(SamplerKind::Degree),
            other => Err(format!("unknown sampler {other:?}")),
        }
    }
}

/// Selected donor neighbors per inaccurate node, built at `epoch`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborSelection {
    epoch: usize,
    entries: BTreeMap<usize, Vec<usize>>,
    plan: Arc<[RowMean]>,
}

impl NeighborSelection {
    pub fn new(epoch: usize, entries: BTreeMap<usize, Vec<usize>>) -> Self {
        let plan: Vec<RowMean> = entries
            .iter()
            .filter(|(_, s)| !s.is_empty())
            .map(|(&row, s)| RowMean {
                row,
                sources: s.clone(),
            })
            .collect();
        NeighborSelection {
            epoch,
            entries,
            plan: plan.into(),
        }
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn entries(&self) -> &BTreeMap<usize, Vec<usize>> {
        &self.entries
    }

    /// True when no row would be replaced.
    pub fn is_empty(&self) -> bool {
        self.plan.is_empty()
    }

    /// Replacement plan covering keys with at least one selected neighbor.
    pub fn plan(&self) -> Arc<[RowMean]> {
        Arc::clone(&self.plan)
    }
}

/// Masked nodes whose prediction differs from their reference label.
/// Nodes without a reference label are skipped.
pub fn find_inaccurate(predicted: &[usize], reference: &[Option<usize>], mask: &[bool]) -> Vec<usize> {
    predicted
        .iter()
        .zip(reference)
        .zip(mask)
        .enumerate()
        .filter_map(|(i, ((&p, &r), &m))| match r {
            Some(r) if m && p != r => Some(i),
            _ => None,
        })
        .collect()
}

/// Draws `ȳ` for `node` from its neighbors' predicted labels. An isolated
/// node keeps its own prediction.
pub fn sample_label<R: Rng + ?Sized>(
    graph: &Graph,
    node: usize,
    predicted: &[usize],
    kind: SamplerKind,
    rng: &mut R,
) -> usize {
    let nbrs = graph.neighbors(node);
    if nbrs.is_empty() {
        return predicted[node];
    }
    match kind {
        SamplerKind::Random => predicted[nbrs[rng.random_range(0..nbrs.len())]],
        SamplerKind::Major => {
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for &j in nbrs {
                *counts.entry(predicted[j]).or_default() += 1;
            }
            // BTreeMap iterates in class order, so `max_by` keeping the first
            // maximum needs reversed tie-breaking.
            counts
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(c, _)| c)
                .unwrap_or(predicted[node])
        }
        SamplerKind::Degree => {
            let weights: Vec<usize> = nbrs.iter().map(|&j| graph.degree(j)).collect();
            // Every neighbor has degree >= 1 (it is adjacent to `node`).
            let dist = WeightedIndex::new(&weights).expect("positive neighbor degrees");
            predicted[nbrs[dist.sample(rng)]]
        }
    }
}

/// Neighbors of `node` whose predicted label equals `label`.
pub fn select_neighbors(graph: &Graph, node: usize, label: usize, predicted: &[usize]) -> Vec<usize> {
    graph
        .neighbors(node)
        .iter()
        .copied()
        .filter(|&j| predicted[j] == label)
        .collect()
}

/// Runs the sampler over every inaccurate masked node.
pub fn build_selection<R: Rng + ?Sized>(
    graph: &Graph,
    predicted: &[usize],
    reference: &[Option<usize>],
    mask: &[bool],
    kind: SamplerKind,
    epoch: usize,
    rng: &mut R,
) -> NeighborSelection {
    let mut entries = BTreeMap::new();
    for node in find_inaccurate(predicted, reference, mask) {
        let label = sample_label(graph, node, predicted, kind, rng);
        entries.insert(node, select_neighbors(graph, node, label, predicted));
    }
    NeighborSelection::new(epoch, entries)
}

/// Replaces each key row with the mean of its selected neighbors' rows.
pub fn propagate_embeddings(h1: &DenseMatrix, selection: &NeighborSelection) -> Result<DenseMatrix> {
    if selection.is_empty() {
        return Ok(h1.clone());
    }
    let mut tape = Tape::new();
    let x = tape.constant(h1.clone());
    let y = tape.replace_rows_with_mean(x, selection.plan())?;
    Ok(tape.value(y).clone())
}
