//! Mild solutions of impulsive Hilfer fractional evolution equations and the
//! mixed monotone iteration for their extremal solutions.

// `!(x > 0.0)` is used on purpose so that NaN is rejected along with
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod monotone;
pub mod operators;
pub mod problems;
pub mod quadrature;
pub mod specfun;

pub use error::{Error, Result};
