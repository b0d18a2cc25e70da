//! Output files. Everything goes through `write_atomic`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gvdn::io::write_atomic;
use gvdn::metrics::Metrics;
use gvdn::tensor::DenseMatrix;
use serde::Serialize;

use crate::error::CliError;

const HEMB_MAGIC: &[u8; 8] = b"GVDNHEMB";

/// `GVDNHEMB`, rows and cols as little-endian u64, then the row-major
/// values as little-endian f64.
pub fn hemb_bytes(m: &DenseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * m.len());
    out.extend_from_slice(HEMB_MAGIC);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_hemb(path: &Path) -> Result<DenseMatrix, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let bad = || CliError::config(format!("{} is not an embedding file", path.display()));
    if bytes.len() < 24 || &bytes[..8] != HEMB_MAGIC {
        return Err(bad());
    }
    let word = |k: usize| u64::from_le_bytes(bytes[k..k + 8].try_into().expect("8 bytes")) as usize;
    let (rows, cols) = (word(8), word(16));
    if bytes.len() != 24 + 8 * rows * cols {
        return Err(bad());
    }
    let data = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    DenseMatrix::from_vec(rows, cols, data).map_err(|_| bad())
}

/// `<stem><suffix>.<ext>` under `dir`.
pub fn artifact(dir: &Path, stem: &str, suffix: &str, ext: &str) -> PathBuf {
    dir.join(format!("{stem}{suffix}.{ext}"))
}

/// Seed suffix used when a run has more than one repetition.
pub fn seed_suffix(repetitions: usize, seed: u64) -> String {
    if repetitions > 1 {
        format!("-seed{seed}")
    } else {
        String::new()
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes())?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(gvdn::Error::from)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).map_err(gvdn::Error::from)?);
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut text = header.join(",");
    text.push('\n');
    for r in rows {
        text.push_str(&r.join(","));
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn embeddings_csv(ids: &[String], hemb: &DenseMatrix) -> String {
    let mut out = String::from("node_id");
    for j in 0..hemb.cols() {
        let _ = write!(out, ",h{j}");
    }
    out.push('\n');
    for (i, id) in ids.iter().enumerate() {
        out.push_str(id);
        for v in hemb.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// One metrics JSON line.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub command: &'static str,
    pub seed: u64,
    pub row: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

/// Population mean and standard deviation.
pub fn stat(xs: &[f64]) -> Stat {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Stat { mean, std: var.sqrt() }
}

/// Accuracy and entropy statistics of one named row across seeds.
#[derive(Debug, Clone, Serialize)]
pub struct RowSummary {
    pub row: String,
    pub accuracy: Stat,
    pub normalized_entropy: Stat,
}

pub fn summarize(rows: &[MetricsRow]) -> Vec<RowSummary> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.row.as_str()) {
            names.push(&r.row);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let of: Vec<&Metrics> = rows.iter().filter(|r| r.row == name).map(|r| &r.metrics).collect();
            RowSummary {
                row: name.to_string(),
                accuracy: stat(&of.iter().map(|m| m.accuracy).collect::<Vec<_>>()),
                normalized_entropy: stat(&of.iter().map(|m| m.normalized_entropy).collect::<Vec<_>>()),
            }
        })
        .collect()
}
