//! Numerical laboratory for pure statistical ensembles of Hamiltonian particles.
//!
//! The same ensemble is described three ways and the descriptions are
//! cross-checked against each other:
//!
//! * [`ensemble`]: weighted phase-space samples moved along Hamilton characteristics,
//! * [`fluid`]: density, Clebsch potentials and Lagrangian labels on a grid,
//!   plus the Hamilton–Jacobi reduction of irrotational flow,
//! * [`psirep`] and [`schrodinger`]: the wave-function form, the gauge map between the
//!   nonlinear and linear wave equations, and their time steppers.
//!
//! [`clebsch`] holds the momentum representation and the Jacobian identities behind it,
//! [`worldfunc`] evaluates the Minkowski and distorted world functions.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clebsch;
pub mod ensemble;
pub mod error;
pub mod fluid;
pub mod hamiltonian;
pub mod numerics;
pub mod psirep;
pub mod schrodinger;
pub mod worldfunc;

pub use error::{Error, Result};
