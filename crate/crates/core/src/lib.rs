//! Orthogonal low-rank expert decomposition of dense weight matrices and
//! dynamic, output-preserving regrouping of their rank-1 components.
//!
//! The crate is organised bottom-up:
//!
//! - [`linops`]: dense matrices, a deterministic Jacobi SVD, matrix file formats.
//! - [`bad`]: splitting a weight matrix into `K` mutually orthogonal rank-`r`
//!   LoRA experts plus a frozen residual.
//! - [`dog`]: capacity-constrained spherical clustering of rank-1 gradients,
//!   Procrustes-orthogonalised centroids and the regrouping step.
//! - [`moe`]: the mixture-of-LoRA layer (scalar routing or input-gated top-k)
//!   with analytic gradients.
//! - [`harness`]: synthetic multi-task training, continual-learning metrics and
//!   the activation / Fisher overlap analysis.
//! - [`cli`]: the `badit` command-line front end.

pub mod bad;
pub mod cli;
pub mod dog;
mod error;
pub mod harness;
pub mod linops;
pub mod moe;
pub(crate) mod rng;

pub use error::{Error, Result};

/// Version tag written into every JSON artifact.
pub const FORMAT_VERSION: u32 = 1;
