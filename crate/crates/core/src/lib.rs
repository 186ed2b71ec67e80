//! Phase-field approximation of cohesive fracture energies and the numerical
//! machinery around its limit model: relaxed volume densities, the cohesive
//! surface density from one-dimensional cell problems, a discrete solver for
//! the regularized functional and an ε-sweep harness comparing both.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod envelopes;
pub mod gamma_harness;
pub mod material_laws;
pub mod optim;
pub mod phasefield;
pub mod surface_density;

pub use material_laws::{LawError, MaterialLaw, MatrixArg};
