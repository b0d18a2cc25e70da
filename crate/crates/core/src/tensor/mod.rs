//! Dense and sparse matrices plus the differentiation tape built on them.

mod dense;
mod sparse;
mod tape;

pub use dense::DenseMatrix;
pub use sparse::SparseMatrix;
pub use tape::{Elementwise, Gradients, RowMean, Tape, Var};
