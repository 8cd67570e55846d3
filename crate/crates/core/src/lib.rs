// `!(x > 0.0)` is the NaN-rejecting form used for every parameter check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops in the kernels mirror the linear algebra they implement.
#![allow(clippy::needless_range_loop)]

pub mod approx;
mod error;
pub mod grid;
pub mod hamiltonian;
pub mod lagrangian;
pub mod levy;
pub mod lp;
pub mod mather;
pub mod numerics;
pub mod solver;

pub use error::{Error, Result};
pub use grid::GridFunction;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
