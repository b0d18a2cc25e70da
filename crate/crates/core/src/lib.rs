//! Graph variational diffusion encoder for node classification, with a
//! retraining pipeline that recovers accuracy on perturbed graphs.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense/CSR matrices and a reverse-mode tape.
//! - [`graph`]: graph values, adjacency normalization, splits, loaders, SBM.
//! - [`model`]: encoder parameters, diffusion schedule, forward passes.
//! - [`objectives`]: the loss terms and their weighted sum.
//! - [`propagation`]: neighbor sampling and embedding propagation.
//! - [`perturbation`]: structure and label perturbation generators.
//! - [`train`]: Adam, the training loop, pseudo labels and retraining.
//! - [`metrics`]: accuracy and normalized entropy.

pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub mod graph;
pub mod io;
mod rng;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod perturbation;
pub mod propagation;
pub mod train;
