use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Compressed sparse row matrix. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Validates raw CSR arrays.
    pub fn try_new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != rows + 1 || row_offsets[0] != 0 {
            return Err(Error::contract("row offsets must have rows + 1 entries starting at 0"));
        }
        if col_indices.len() != values.len() || *row_offsets.last().unwrap() != values.len() {
            return Err(Error::contract("row offsets do not match stored entry count"));
        }
        for i in 0..rows {
            let (lo, hi) = (row_offsets[i], row_offsets[i + 1]);
            if lo > hi {
                return Err(Error::contract(format!("row offsets decrease at row {i}")));
            }
            let cols_i = &col_indices[lo..hi];
            if cols_i.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::contract(format!(
                    "column indices not strictly increasing in row {i}"
                )));
            }
            if cols_i.last().is_some_and(|&c| c >= cols) {
                return Err(Error::contract(format!("column index out of range in row {i}")));
            }
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds from (row, col, value) triplets; duplicate coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= rows || c >= cols {
                return Err(Error::dim(
                    "from_triplets",
                    format!("entry ({r}, {c}) outside {rows}x{cols}"),
                ));
            }
        }
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_offsets = vec![0usize; rows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            col_indices.push(c);
            values.push(v);
            row_offsets[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Keeps the nonzero entries of a dense matrix.
    pub fn from_dense(m: &DenseMatrix) -> Self {
        let mut row_offsets = Vec::with_capacity(m.rows() + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v != 0.0 {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets.push(values.len());
        }
        SparseMatrix {
            rows: m.rows(),
            cols: m.cols(),
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            row_offsets: vec![0; rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Same sparsity pattern with new values (explicit zeros are kept).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.nnz() {
            return Err(Error::dim(
                "with_values",
                format!("{} values for {} stored entries", values.len(), self.nnz()),
            ));
        }
        Ok(SparseMatrix {
            values,
            ..self.clone()
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    /// Stored value at (i, j), or 0.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.rows, self.cols);
        for (i, j, v) in self.iter() {
            m.set(i, j, v);
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for j in 0..self.cols {
            counts[j + 1] += counts[j];
        }
        let row_offsets = counts.clone();
        let mut next = counts;
        let mut col_indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for (i, j, v) in self.iter() {
            let slot = next[j];
            col_indices[slot] = i;
            values[slot] = v;
            next[j] += 1;
        }
        SparseMatrix {
            rows: self.cols,
            cols: self.rows,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.iter().all(|(i, j, v)| self.get(j, i) == v)
    }

    /// `self · dense`.
    pub fn spmm(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != b.rows() {
            return Err(Error::dim(
                "spmm",
                format!(
                    "{}x{} sparse times {}x{}",
                    self.rows,
                    self.cols,
                    b.rows(),
                    b.cols()
                ),
            ));
        }
        let m = b.cols();
        let mut out = DenseMatrix::zeros(self.rows, m);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            let out_row = out.row_mut(i);
            for (&j, &a) in cols.iter().zip(vals) {
                for (o, &x) in out_row.iter_mut().zip(b.row(j)) {
                    *o += a * x;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · dense`, traversing the CSR arrays as columns.
    pub fn spmm_transpose(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != b.rows() {
            return Err(Error::dim(
                "spmm_transpose",
                format!(
                    "({}x{})ᵀ sparse times {}x{}",
                    self.rows,
                    self.cols,
                    b.rows(),
                    b.cols()
                ),
            ));
        }
        let mut out = DenseMatrix::zeros(self.cols, b.cols());
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            let b_row = b.row(i);
            for (&j, &a) in cols.iter().zip(vals) {
                for (o, &x) in out.row_mut(j).iter_mut().zip(b_row) {
                    *o += a * x;
                }
            }
        }
        Ok(out)
    }
}
