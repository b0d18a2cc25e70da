//! Undirected attributed graphs with transductive split masks.

mod io;
mod planetoid;
mod sbm;

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::{DenseMatrix, SparseMatrix};

pub use io::GraphDocument;
pub use planetoid::{load_planetoid, write_planetoid, Planetoid, PlanetoidOptions};
pub use sbm::{generate_sbm, SbmConfig};

/// Train / validation / test membership per node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub validation: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMasks {
    /// All-false masks for `n` nodes.
    pub fn empty(n: usize) -> Self {
        SplitMasks {
            train: vec![false; n],
            validation: vec![false; n],
            test: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }

    pub fn train_ids(&self) -> Vec<usize> {
        indices(&self.train)
    }

    pub fn validation_ids(&self) -> Vec<usize> {
        indices(&self.validation)
    }

    pub fn test_ids(&self) -> Vec<usize> {
        indices(&self.test)
    }

    /// Validation ∪ test, the nodes targeted by perturbations.
    pub fn victim_mask(&self) -> Vec<bool> {
        self.validation
            .iter()
            .zip(&self.test)
            .map(|(&v, &t)| v || t)
            .collect()
    }

    /// Appends `extra` nodes that belong to no split.
    pub fn extended(&self, extra: usize) -> Self {
        let grow = |m: &Vec<bool>| {
            let mut m = m.clone();
            m.resize(m.len() + extra, false);
            m
        };
        SplitMasks {
            train: grow(&self.train),
            validation: grow(&self.validation),
            test: grow(&self.test),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.train.len() != n || self.validation.len() != n || self.test.len() != n {
            return Err(Error::dim("split masks", format!("masks must have {n} entries")));
        }
        for i in 0..n {
            let k = self.train[i] as u8 + self.validation[i] as u8 + self.test[i] as u8;
            if k > 1 {
                return Err(Error::contract(format!("node {i} is in more than one split")));
            }
        }
        Ok(())
    }
}

/// Indices of the `true` entries.
pub fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

/// Random disjoint partition of `n` nodes. Train and validation sizes are
/// floored; the remainder goes to test.
pub fn make_splits(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<SplitMasks> {
    if n < 3 {
        return Err(Error::contract(format!("need at least 3 nodes to split, got {n}")));
    }
    let (tr, va, te) = ratios;
    if tr < 0.0 || va < 0.0 || te < 0.0 || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(Error::contract("split ratios must be non-negative and sum to 1"));
    }
    let n_train = (n as f64 * tr + 1e-9).floor() as usize;
    let n_val = (n as f64 * va + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed));
    let mut masks = SplitMasks::empty(n);
    for (k, &i) in order.iter().enumerate() {
        if k < n_train {
            masks.train[i] = true;
        } else if k < n_train + n_val {
            masks.validation[i] = true;
        } else {
            masks.test[i] = true;
        }
    }
    Ok(masks)
}

/// Row sums of a square matrix.
pub fn degree_vector(adjacency: &SparseMatrix) -> Vec<f64> {
    adjacency.row_sums()
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃ = D + I`.
pub fn normalize_adjacency(adjacency: &SparseMatrix) -> Result<SparseMatrix> {
    let n = adjacency.rows();
    if adjacency.cols() != n {
        return Err(Error::dim(
            "normalize_adjacency",
            format!("adjacency is {}x{}", n, adjacency.cols()),
        ));
    }
    let deg: Vec<f64> = degree_vector(adjacency).iter().map(|d| d + 1.0).collect();
    let mut triplets = Vec::with_capacity(adjacency.nnz() + n);
    for i in 0..n {
        triplets.push((i, i, 1.0 / (deg[i] * deg[i]).sqrt()));
        let (cols, vals) = adjacency.row(i);
        for (&j, &a) in cols.iter().zip(vals) {
            if j == i {
                continue;
            }
            triplets.push((i, j, a / (deg[i] * deg[j]).sqrt()));
        }
    }
    SparseMatrix::from_triplets(n, n, &triplets)
}

/// An undirected attributed graph. Immutable; "modifying" methods return a
/// new value.
#[derive(Debug, Clone)]
pub struct Graph {
    adjacency: Arc<SparseMatrix>,
    normalized: Arc<SparseMatrix>,
    features: DenseMatrix,
    feature_csr: Arc<SparseMatrix>,
    labels: Vec<Option<usize>>,
    num_classes: usize,
    masks: SplitMasks,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.adjacency == other.adjacency
            && self.features == other.features
            && self.labels == other.labels
            && self.num_classes == other.num_classes
            && self.masks == other.masks
    }
}

impl Graph {
    /// Validates a binary symmetric adjacency with zero diagonal and builds
    /// the normalized adjacency.
    pub fn new(
        adjacency: SparseMatrix,
        features: DenseMatrix,
        labels: Vec<Option<usize>>,
        num_classes: usize,
        masks: SplitMasks,
    ) -> Result<Self> {
        let n = adjacency.rows();
        if adjacency.cols() != n {
            return Err(Error::dim("graph", "adjacency must be square"));
        }
        if features.rows() != n || labels.len() != n {
            return Err(Error::dim(
                "graph",
                format!(
                    "{n} nodes but {} feature rows and {} labels",
                    features.rows(),
                    labels.len()
                ),
            ));
        }
        if let Some((i, j, _)) = adjacency.iter().find(|&(i, j, v)| i == j || v != 1.0) {
            return Err(Error::contract(format!(
                "adjacency must be binary with zero diagonal (entry {i},{j})"
            )));
        }
        if !adjacency.is_symmetric() {
            return Err(Error::contract("adjacency must be symmetric"));
        }
        if let Some(bad) = labels.iter().flatten().find(|&&c| c >= num_classes) {
            return Err(Error::contract(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("graph features"));
        }
        masks.validate(n)?;
        let normalized = normalize_adjacency(&adjacency)?;
        let feature_csr = SparseMatrix::from_dense(&features);
        Ok(Graph {
            adjacency: Arc::new(adjacency),
            normalized: Arc::new(normalized),
            features,
            feature_csr: Arc::new(feature_csr),
            labels,
            num_classes,
            masks,
        })
    }

    /// Builds the graph from an undirected edge list. Self loops are
    /// dropped and duplicates (in either direction) merged.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize)],
        features: DenseMatrix,
        labels: Vec<Option<usize>>,
        num_classes: usize,
        masks: SplitMasks,
    ) -> Result<Self> {
        Graph::new(
            adjacency_from_edges(n, edges)?,
            features,
            labels,
            num_classes,
            masks,
        )
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn adjacency(&self) -> &Arc<SparseMatrix> {
        &self.adjacency
    }

    /// `Â`, the self-loop augmented, symmetrically normalized adjacency.
    pub fn normalized_adjacency(&self) -> &Arc<SparseMatrix> {
        &self.normalized
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    /// Features in CSR form, for sparse-times-weight products.
    pub fn feature_csr(&self) -> &Arc<SparseMatrix> {
        &self.feature_csr
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    pub fn masks(&self) -> &SplitMasks {
        &self.masks
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        self.adjacency.row(i).0
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).len()
    }

    /// Undirected edges as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .filter(|&(i, j, _)| i < j)
            .map(|(i, j, _)| (i, j))
            .collect()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn with_masks(&self, masks: SplitMasks) -> Result<Self> {
        masks.validate(self.num_nodes())?;
        let mut g = self.clone();
        g.masks = masks;
        Ok(g)
    }

    pub fn with_labels(&self, labels: Vec<Option<usize>>) -> Result<Self> {
        if labels.len() != self.num_nodes() {
            return Err(Error::dim("with_labels", "label vector length must equal n"));
        }
        if labels.iter().flatten().any(|&c| c >= self.num_classes) {
            return Err(Error::contract("label outside class range"));
        }
        let mut g = self.clone();
        g.labels = labels;
        Ok(g)
    }

    /// Same structure and features with every label removed.
    pub fn without_labels(&self) -> Self {
        let mut g = self.clone();
        g.labels = vec![None; self.num_nodes()];
        g
    }

    pub fn with_features(&self, features: DenseMatrix) -> Result<Self> {
        Graph::new(
            (*self.adjacency).clone(),
            features,
            self.labels.clone(),
            self.num_classes,
            self.masks.clone(),
        )
    }

    /// Fraction of edges joining two nodes of the same label. Edges touching
    /// an unlabeled node are ignored.
    pub fn edge_homophily(&self) -> f64 {
        let (mut same, mut total) = (0usize, 0usize);
        for (i, j) in self.edges() {
            if let (Some(a), Some(b)) = (self.labels[i], self.labels[j]) {
                total += 1;
                same += (a == b) as usize;
            }
        }
        if total == 0 {
            0.0
        } else {
            same as f64 / total as f64
        }
    }
}

pub(crate) fn adjacency_from_edges(n: usize, edges: &[(usize, usize)]) -> Result<SparseMatrix> {
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(edges.len() * 2);
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(Error::dim("edges", format!("edge ({i}, {j}) with {n} nodes")));
        }
        if i != j {
            pairs.push((i, j));
            pairs.push((j, i));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let triplets: Vec<_> = pairs.into_iter().map(|(i, j)| (i, j, 1.0)).collect();
    SparseMatrix::from_triplets(n, n, &triplets)
}
