use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{make_splits, Graph, SplitMasks};
use crate::rng::{derive_seed, seeded};
use crate::tensor::DenseMatrix;

/// Planted-partition stochastic block model with block-structured features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmConfig {
    pub nodes_per_class: usize,
    pub num_classes: usize,
    pub intra_edge_prob: f64,
    pub inter_edge_prob: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            nodes_per_class: 150,
            num_classes: 4,
            intra_edge_prob: 0.05,
            inter_edge_prob: 0.002,
            feature_dim: 32,
            feature_noise: 1.0,
            seed: 0,
        }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.intra_edge_prob) || !prob(self.inter_edge_prob) {
            return Err(Error::contract("edge probabilities must lie in [0, 1]"));
        }
        if self.intra_edge_prob <= self.inter_edge_prob {
            return Err(Error::contract(
                "intra-class edge probability must exceed the inter-class one",
            ));
        }
        if self.nodes_per_class < 10 || self.num_classes < 2 {
            return Err(Error::contract("need at least two classes of at least 10 nodes"));
        }
        if self.feature_dim < self.num_classes {
            return Err(Error::contract("feature_dim must be at least num_classes"));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::contract("feature_noise must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Node `i` belongs to class `i / nodes_per_class`. Class `c` features
/// carry ones on the `c`-th block of `feature_dim / num_classes` columns
/// plus `feature_noise`-scaled standard normal noise. Splits are 10/20/70
/// within each class.
pub fn generate_sbm(config: &SbmConfig) -> Result<Graph> {
    config.validate()?;
    let k = config.num_classes;
    let n = config.nodes_per_class * k;
    let class = |i: usize| i / config.nodes_per_class;

    let mut edge_rng = seeded(derive_seed(config.seed, 1));
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if class(i) == class(j) {
                config.intra_edge_prob
            } else {
                config.inter_edge_prob
            };
            if edge_rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let block = config.feature_dim / k;
    let mut feat_rng = seeded(derive_seed(config.seed, 2));
    let features = DenseMatrix::from_fn(n, config.feature_dim, |i, j| {
        let mean = if j / block == class(i) { 1.0 } else { 0.0 };
        let z: f64 = StandardNormal.sample(&mut feat_rng);
        mean + config.feature_noise * z
    });

    let labels = (0..n).map(|i| Some(class(i))).collect();
    // Split each class separately so every class is supervised.
    let mut masks = SplitMasks::empty(n);
    for c in 0..k {
        let block = make_splits(config.nodes_per_class, (0.1, 0.2, 0.7), derive_seed(config.seed, 3 + c as u64))?;
        let offset = c * config.nodes_per_class;
        for i in 0..config.nodes_per_class {
            masks.train[offset + i] = block.train[i];
            masks.validation[offset + i] = block.validation[i];
            masks.test[offset + i] = block.test[i];
        }
    }
    Graph::from_edges(n, &edges, features, labels, k, masks)
}
