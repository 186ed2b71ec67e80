//! Relaxation kernels for the volume density `h`: convex envelopes (exact 1D
//! hull and a grid Legendre–Fenchel transform), iterated rank-one lamination
//! bracketing the quasiconvex envelope from above, and numerical recession
//! functions.

mod convex;
mod lamination;
mod recession;
mod table;

pub use convex::{convex_envelope_1d, convex_envelope_grid, ScalarFunction};
pub use lamination::{lamination_envelope, lamination_envelope_with, lamination_table, LaminationOptions};
pub use recession::{recession_along, recession_numeric, RayProbe, RecessionSource};
pub use table::{AxisSpec, EnvelopeKind, EnvelopeTable, GridSpec};

use thiserror::Error;

use crate::material_laws::LawError;

#[derive(Debug, Error)]
pub enum EnvelopeError {
    #[error(transparent)]
    Law(#[from] LawError),
    #[error("non-finite value {value} at t = {t}")]
    NonFinite { t: f64, value: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid too coarse to certify: envelope exceeds h by {excess:.3e} at {at:?}")]
    NotCertified { excess: f64, at: Vec<f64> },
    #[error("query point {0:?} lies outside the table")]
    OutOfRange(Vec<f64>),
    #[error("invalid probe: {0}")]
    InvalidProbe(String),
    #[error("recession did not converge: per-decade slopes {slopes:?}")]
    NonConvergentRecession { slopes: Vec<f64> },
    #[error("lamination depth {0} exceeds the supported maximum of 4")]
    DepthTooLarge(usize),
    #[error("table I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("table format: {0}")]
    Format(#[from] serde_json::Error),
}
