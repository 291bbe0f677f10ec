//! Numerical toolkit for the cavity equation of the random assignment problem.
//!
//! - [`grid_fn`]: monotone grid functions and exact kernel quadrature.
//! - [`cavity`]: the truncated operator `T` and its certified sandwich iteration.
//! - [`limit`]: energies, tail bounds, λ-sweeps and untruncated residuals.
//! - [`rde_mc`]: population dynamics for `Z = min_i (ξ_i - Z_i)`.
//! - [`assign_mc`]: random assignment instances solved exactly.

pub mod assign_mc;
pub mod cavity;
pub mod error;
pub mod grid_fn;
pub mod limit;
mod quad;
pub mod rde_mc;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
