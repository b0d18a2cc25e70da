//! Reader and writer for the Planetoid `.content` / `.cites` text format.
//!
//! `.content`: `<id>\t<f_1>\t...\t<f_d>\t<label>` per node.
//! `.cites`: `<cited>\t<citing>` per directed citation; edges are
//! symmetrized on load.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{make_splits, Graph};
use crate::io::write_atomic;
use crate::tensor::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct PlanetoidOptions {
    /// Scale each feature row to sum to 1 (rows summing to 0 are left alone).
    pub normalize_features: bool,
    pub split_ratios: (f64, f64, f64),
    pub split_seed: u64,
}

impl Default for PlanetoidOptions {
    fn default() -> Self {
        PlanetoidOptions {
            normalize_features: true,
            split_ratios: (0.1, 0.2, 0.7),
            split_seed: 0,
        }
    }
}

/// A loaded dataset together with the identifiers needed to write it back.
#[derive(Debug, Clone)]
pub struct Planetoid {
    pub graph: Graph,
    /// Original node identifier per node index.
    pub node_ids: Vec<String>,
    /// Class name per class id (sorted, so ids do not depend on file order).
    pub class_names: Vec<String>,
    /// Citations whose endpoints are not in the content file.
    pub skipped_edges: usize,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn load_planetoid(
    content_path: impl AsRef<Path>,
    cites_path: impl AsRef<Path>,
    options: &PlanetoidOptions,
) -> Result<Planetoid> {
    let content_path = content_path.as_ref();
    let cites_path = cites_path.as_ref();
    let content = fs::read_to_string(content_path).map_err(|e| Error::io(content_path, e))?;
    let cites = fs::read_to_string(cites_path).map_err(|e| Error::io(cites_path, e))?;

    let mut node_ids = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut raw_labels = Vec::new();
    let mut features: Vec<f64> = Vec::new();
    let mut dim: Option<usize> = None;

    for (lineno, line) in content.lines().enumerate().map(|(k, l)| (k + 1, l)) {
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 3 {
            return Err(parse_err(content_path, lineno, "expected id, features and label"));
        }
        let d = tokens.len() - 2;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(parse_err(
                    content_path,
                    lineno,
                    format!("{d} feature values, expected {expected}"),
                ))
            }
            _ => {}
        }
        let id = tokens[0].to_string();
        if index.insert(id.clone(), node_ids.len()).is_some() {
            return Err(parse_err(content_path, lineno, format!("duplicate node id {id}")));
        }
        for tok in &tokens[1..tokens.len() - 1] {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(content_path, lineno, format!("bad feature value {tok:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(content_path, lineno, "non-finite feature value"));
            }
            features.push(v);
        }
        node_ids.push(id);
        raw_labels.push(tokens[tokens.len() - 1].to_string());
    }
    let Some(dim) = dim else {
        return Err(Error::Ingest(format!(
            "{} contains no nodes",
            content_path.display()
        )));
    };
    let n = node_ids.len();

    let class_names: Vec<String> = raw_labels
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let class_of: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(k, c)| (c.as_str(), k))
        .collect();
    let labels = raw_labels.iter().map(|l| Some(class_of[l.as_str()])).collect();

    let mut edges = Vec::new();
    let mut skipped = 0usize;
    let mut saw_line = false;
    for (lineno, line) in cites.lines().enumerate().map(|(k, l)| (k + 1, l)) {
        if line.trim().is_empty() {
            continue;
        }
        saw_line = true;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 2 {
            return Err(parse_err(cites_path, lineno, "expected two node ids"));
        }
        match (index.get(tokens[0]), index.get(tokens[1])) {
            (Some(&a), Some(&b)) => edges.push((a, b)),
            _ => skipped += 1,
        }
    }
    if !saw_line {
        return Err(Error::Ingest(format!(
            "{} contains no citations",
            cites_path.display()
        )));
    }
    if skipped > 0 {
        log::warn!(
            "skipped {skipped} citation(s) with unknown endpoints in {}",
            cites_path.display()
        );
    }

    let mut features = DenseMatrix::from_vec(n, dim, features)?;
    if options.normalize_features {
        for i in 0..n {
            let row = features.row_mut(i);
            let s: f64 = row.iter().sum();
            if s != 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
    }
    let masks = make_splits(n, options.split_ratios, options.split_seed)?;
    let graph = Graph::from_edges(n, &edges, features, labels, class_names.len(), masks)?;
    Ok(Planetoid {
        graph,
        node_ids,
        class_names,
        skipped_edges: skipped,
    })
}

/// Writes the graph back out; each undirected edge is written once.
pub fn write_planetoid(
    data: &Planetoid,
    content_path: impl AsRef<Path>,
    cites_path: impl AsRef<Path>,
) -> Result<()> {
    let g = &data.graph;
    if data.node_ids.len() != g.num_nodes() {
        return Err(Error::dim("write_planetoid", "one node id per node required"));
    }
    let mut content = String::new();
    for i in 0..g.num_nodes() {
        let label = g
            .label(i)
            .ok_or_else(|| Error::contract(format!("node {i} has no label to write")))?;
        content.push_str(&data.node_ids[i]);
        for v in g.features().row(i) {
            write!(content, "\t{v}").unwrap();
        }
        writeln!(content, "\t{}", data.class_names[label]).unwrap();
    }
    let mut cites = String::new();
    for (i, j) in g.edges() {
        writeln!(cites, "{}\t{}", data.node_ids[i], data.node_ids[j]).unwrap();
    }
    write_atomic(content_path, content.as_bytes())?;
    write_atomic(cites_path, cites.as_bytes())
}
