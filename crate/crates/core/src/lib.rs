//! Dyadic and continuous Wolff potentials, their bar-kernel variants and
//! the numerical checks relating them.

// NaN-rejecting guards are written as `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod ext;
pub mod kernels;
pub mod lattice;
pub mod measures;
pub mod par;
pub mod potentials;
pub mod quadrature;
pub mod report;
pub mod scenario;
pub mod suites;
pub mod verify;

pub use error::{Error, Result};
