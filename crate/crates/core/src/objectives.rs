//! Loss terms. Each has a tape form (used by training) and a value form.
//!
//! The KL, diffusion and embedding-matching terms are means over all
//! (node, hidden unit) entries so that unit weights keep them on a
//! comparable scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, Tape, Var};

/// Which terms enter the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Cross entropy, KL and diffusion.
    Training,
    /// All four terms, including embedding matching.
    Retraining,
}

/// Per-term loss values and their weights `[ce, kl, df, nm]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossVector {
    pub ce: f64,
    pub kl: f64,
    pub df: f64,
    pub nm: f64,
    pub lambda: [f64; 4],
}

impl LossVector {
    pub fn total(&self, phase: Phase) -> f64 {
        let l = self.lambda;
        let base = l[0] * self.ce + l[1] * self.kl + l[2] * self.df;
        match phase {
            Phase::Training => base,
            Phase::Retraining => base + l[3] * self.nm,
        }
    }
}

/// `(node, class)` pairs for masked nodes; every masked node needs a label.
pub fn supervised_targets(labels: &[Option<usize>], mask: &[bool]) -> Result<Vec<(usize, usize)>> {
    if labels.len() != mask.len() {
        return Err(Error::dim("cross_entropy", "labels and mask differ in length"));
    }
    let mut targets = Vec::new();
    for (i, (&l, &m)) in labels.iter().zip(mask).enumerate() {
        if m {
            let l = l.ok_or_else(|| Error::contract(format!("masked node {i} has no label")))?;
            targets.push((i, l));
        }
    }
    if targets.is_empty() {
        return Err(Error::contract("cross entropy mask selects no node"));
    }
    Ok(targets)
}

pub fn cross_entropy_on(tape: &mut Tape, logits: Var, labels: &[Option<usize>], mask: &[bool]) -> Result<Var> {
    if labels.len() != tape.value(logits).rows() {
        return Err(Error::dim("cross_entropy", "one label per logit row required"));
    }
    let targets = supervised_targets(labels, mask)?;
    tape.cross_entropy(logits, targets)
}

/// `−(1/N) Σ_masked log softmax(logits_i)[y_i]`.
pub fn cross_entropy(logits: &DenseMatrix, labels: &[Option<usize>], mask: &[bool]) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let v = cross_entropy_on(&mut tape, l, labels, mask)?;
    Ok(tape.scalar(v))
}

/// `mean(0.5·(σ² + μ² − 1 − 2·logσ))`, KL of `N(μ, σ²)` from `N(0, 1)`.
pub fn kl_gaussian_on(tape: &mut Tape, mu: Var, log_sigma: Var) -> Result<Var> {
    let two_ls = tape.scale(log_sigma, 2.0)?;
    let var = tape.exp(two_ls)?;
    let mu2 = tape.mul(mu, mu)?;
    let s = tape.add(var, mu2)?;
    let s = tape.sub(s, two_ls)?;
    let s = tape.add_scalar(s, -1.0)?;
    let m = tape.mean(s)?;
    tape.scale(m, 0.5)
}

pub fn kl_gaussian(mu: &DenseMatrix, log_sigma: &DenseMatrix) -> Result<f64> {
    let mut tape = Tape::new();
    let m = tape.constant(mu.clone());
    let s = tape.constant(log_sigma.clone());
    let v = kl_gaussian_on(&mut tape, m, s)?;
    Ok(tape.scalar(v))
}

fn mean_squared_diff(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let sq = tape.mul(d, d)?;
    tape.mean(sq)
}

/// `mean((ε − Z)²)`.
pub fn diffusion_loss_on(tape: &mut Tape, epsilon: Var, z: Var) -> Result<Var> {
    mean_squared_diff(tape, epsilon, z)
}

pub fn diffusion_loss(epsilon: &DenseMatrix, z: &DenseMatrix) -> Result<f64> {
    let mut tape = Tape::new();
    let e = tape.constant(epsilon.clone());
    let z = tape.constant(z.clone());
    let v = diffusion_loss_on(&mut tape, e, z)?;
    Ok(tape.scalar(v))
}

/// `(reference row, predicted row)` pairs for nodes present in both graphs.
pub type NodePairs = [(usize, usize)];

/// Mean squared difference between mapped rows of the reference and the
/// predicted embeddings. Unmapped predicted rows do not contribute.
pub fn embedding_match_on(tape: &mut Tape, reference: &DenseMatrix, predicted: Var, pairs: &NodePairs) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::contract("embedding match needs at least one shared node"));
    }
    if reference.cols() != tape.value(predicted).cols() {
        return Err(Error::dim("embedding_match", "embedding widths differ"));
    }
    let ref_rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let pred_rows: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let target = tape.constant(reference.select_rows(&ref_rows)?);
    let picked = tape.select_rows(predicted, pred_rows)?;
    mean_squared_diff(tape, picked, target)
}

pub fn embedding_match_loss(reference: &DenseMatrix, predicted: &DenseMatrix, pairs: &NodePairs) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(predicted.clone());
    let v = embedding_match_on(&mut tape, reference, p, pairs)?;
    Ok(tape.scalar(v))
}

/// Tape handles of the individual terms; `nm` is absent during training.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub ce: Var,
    pub kl: Var,
    pub df: Var,
    pub nm: Option<Var>,
}

impl LossVars {
    pub fn values(&self, tape: &Tape, lambda: [f64; 4]) -> LossVector {
        LossVector {
            ce: tape.scalar(self.ce),
            kl: tape.scalar(self.kl),
            df: tape.scalar(self.df),
            nm: self.nm.map_or(0.0, |v| tape.scalar(v)),
            lambda,
        }
    }
}

/// `λᵀ·[ce, kl, df, nm]` on the tape, restricted to the phase's terms.
pub fn total_loss_on(tape: &mut Tape, parts: &LossVars, lambda: [f64; 4], phase: Phase) -> Result<Var> {
    let mut terms = vec![(parts.ce, lambda[0]), (parts.kl, lambda[1]), (parts.df, lambda[2])];
    if phase == Phase::Retraining {
        let nm = parts
            .nm
            .ok_or_else(|| Error::contract("retraining needs the embedding matching term"))?;
        terms.push((nm, lambda[3]));
    }
    let mut total: Option<Var> = None;
    for (v, w) in terms {
        let scaled = tape.scale(v, w)?;
        total = Some(match total {
            None => scaled,
            Some(t) => tape.add(t, scaled)?,
        });
    }
    Ok(total.expect("at least three terms"))
}
