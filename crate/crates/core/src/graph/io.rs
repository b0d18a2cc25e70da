//! JSON form of a [`Graph`], used for fixtures and golden files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, SplitMasks};
use crate::io::{decode_f64s, encode_f64s, write_atomic};
use crate::tensor::DenseMatrix;

/// `{n, d, num_classes, edges, features, labels, masks}` where `features`
/// is base64 of little-endian `f64` values in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub n: usize,
    pub d: usize,
    pub num_classes: usize,
    pub edges: Vec<[usize; 2]>,
    pub features: String,
    pub labels: Vec<Option<usize>>,
    pub masks: SplitMasks,
}

impl GraphDocument {
    pub fn from_graph(g: &Graph) -> Self {
        GraphDocument {
            n: g.num_nodes(),
            d: g.feature_dim(),
            num_classes: g.num_classes(),
            edges: g.edges().into_iter().map(|(i, j)| [i, j]).collect(),
            features: encode_f64s(g.features().data()),
            labels: g.labels().to_vec(),
            masks: g.masks().clone(),
        }
    }

    pub fn into_graph(self) -> Result<Graph> {
        let values = decode_f64s(&self.features)?;
        if values.len() != self.n * self.d {
            return Err(Error::Format(format!(
                "feature payload has {} values, expected {}x{}",
                values.len(),
                self.n,
                self.d
            )));
        }
        let features = DenseMatrix::from_vec(self.n, self.d, values)?;
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        Graph::from_edges(
            self.n,
            &edges,
            features,
            self.labels,
            self.num_classes,
            self.masks,
        )
    }
}

impl Graph {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&GraphDocument::from_graph(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<GraphDocument>(text)?.into_graph()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
