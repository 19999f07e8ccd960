//! Variable Projection networks (VPNet) end-to-end: adaptive Hermite bases
//! with analytic parameter Jacobians, SVD-based VP layers with exact
//! backpropagation through the pseudoinverse, a minimal feedforward layer
//! stack with fully-connected and convolutional baselines, VP-regularized
//! training, a synthetic spherical-shell classification dataset, and bit-exact
//! file formats.

pub mod error;
pub mod hermite;
pub mod io;
pub(crate) mod linalg;
pub mod nn;
pub mod synth;
pub mod train;
pub mod vp;

pub use error::{Error, Result};

/// Re-exported so downstream code can construct the vector and matrix types
/// appearing in this crate's public signatures without pinning its own copy.
pub use nalgebra;
