//! Recursive least squares with variable-rate forgetting (VRF).
//!
//! - [`linalg`]: small dense symmetric / SPD kernels.
//! - [`estimator`]: the VRF recursion, its constant-rate special case, the
//!   weighted cost and a batch normal-equations oracle.
//! - [`forgetting`]: policies producing the per-step rate `β_k`.
//! - [`analysis`]: persistency profiles, consistency sequences and the
//!   variance bounds built from them.
//! - [`sim`]: ARX plant simulation, scenario runs and Monte Carlo studies.
//! - [`io`]: scenario files and CSV traces.

// `!(x > 0.0)` deliberately rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod estimator;
pub mod forgetting;
pub mod io;
pub mod linalg;
pub mod sim;

pub use error::{Error, Result};
