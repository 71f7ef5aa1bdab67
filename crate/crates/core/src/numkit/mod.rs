//! Deterministic dense linear algebra, seeded randomness, and finite-difference
//! gradient checking.
//!
//! Everything is 64-bit and single-threaded; summation order is fixed so that
//! results are reproducible bit for bit.

mod fd;
mod matrix;
mod rng;

pub use fd::{finite_diff_grad, relative_error};
pub use matrix::{row_softmax, Matrix};
pub use rng::Rng;
