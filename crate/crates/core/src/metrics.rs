//! Classification accuracy and average normalized entropy.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{forward, Checkpoint, EpsilonMode};
use crate::tensor::DenseMatrix;

/// One evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub accuracy: f64,
    pub normalized_entropy: f64,
    pub node_count: usize,
    pub wall_clock_seconds: f64,
}

/// Fraction of masked nodes whose prediction matches the label. Masked
/// nodes without a label count as wrong.
pub fn accuracy(predicted: &[usize], truth: &[Option<usize>], mask: &[bool]) -> Result<f64> {
    let (hits, total) = count_hits(predicted, truth, mask)?;
    Ok(hits as f64 / total as f64)
}

/// `1 − accuracy`, computed from the same counts.
pub fn error_rate(predicted: &[usize], truth: &[Option<usize>], mask: &[bool]) -> Result<f64> {
    let (hits, total) = count_hits(predicted, truth, mask)?;
    Ok((total - hits) as f64 / total as f64)
}

fn count_hits(predicted: &[usize], truth: &[Option<usize>], mask: &[bool]) -> Result<(usize, usize)> {
    if predicted.len() != truth.len() || truth.len() != mask.len() {
        return Err(Error::dim("accuracy", "predictions, labels and mask differ in length"));
    }
    let mut hits = 0;
    let mut total = 0;
    for ((&p, &t), &m) in predicted.iter().zip(truth).zip(mask) {
        if m {
            total += 1;
            hits += (Some(p) == t) as usize;
        }
    }
    if total == 0 {
        return Err(Error::contract("accuracy over an empty mask"));
    }
    Ok((hits, total))
}

/// `−(1/m) Σ_i Σ_k p_ik ln p_ik / ln K` with `0 ln 0 = 0`.
pub fn normalized_entropy(probabilities: &DenseMatrix) -> Result<f64> {
    let (m, k) = probabilities.shape();
    if m == 0 {
        return Err(Error::contract("entropy of an empty set of rows"));
    }
    if k < 2 {
        return Ok(0.0);
    }
    let norm = (k as f64).ln();
    let mut total = 0.0;
    for i in 0..m {
        let row = probabilities.row(i);
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-8 || row.iter().any(|&p| p < 0.0) {
            return Err(Error::contract(format!(
                "row {i} is not a probability distribution (sum {s})"
            )));
        }
        let h: f64 = row
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum();
        total += h / norm;
    }
    Ok((total / m as f64).clamp(0.0, 1.0))
}

/// Accuracy and entropy of masked rows of a logit matrix.
pub fn score_logits(
    logits: &DenseMatrix,
    truth: &[Option<usize>],
    mask: &[bool],
    scenario: &str,
) -> Result<Metrics> {
    let rows = crate::graph::indices(mask);
    let probs = logits.select_rows(&rows)?.softmax_rows();
    let predicted = logits.argmax_rows();
    Ok(Metrics {
        scenario: scenario.to_string(),
        accuracy: accuracy(&predicted, truth, mask)?,
        normalized_entropy: normalized_entropy(&probs)?,
        node_count: rows.len(),
        wall_clock_seconds: 0.0,
    })
}

/// Mean-path (`ε = 0`) evaluation of a checkpoint on the masked nodes of
/// `graph`, scored against the graph's labels.
pub fn evaluate(checkpoint: &Checkpoint, graph: &Graph, mask: &[bool], scenario: &str) -> Result<Metrics> {
    evaluate_with(checkpoint, graph, mask, scenario, EpsilonMode::Zero)
}

/// [`evaluate`] with an explicit noise source.
pub fn evaluate_with(
    checkpoint: &Checkpoint,
    graph: &Graph,
    mask: &[bool],
    scenario: &str,
    epsilon: EpsilonMode,
) -> Result<Metrics> {
    let start = Instant::now();
    let out = forward(
        graph,
        &checkpoint.params,
        &checkpoint.schedule,
        checkpoint.epoch.max(1),
        epsilon,
    )?;
    let mut m = score_logits(&out.hout, graph.labels(), mask, scenario)?;
    m.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(m)
}
