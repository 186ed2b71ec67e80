//! The cohesive surface density `g`.
//!
//! `g_scal(t)` is computed from the one-dimensional cell problem
//!
//! ```text
//! min ∫_{-T/2}^{T/2} f²(β)|α'|² + (1−β)²/4 + |β'|²,
//! α(−T/2) = 0, α(T/2) = t, β(±T/2) = 1,
//! ```
//!
//! in the limit `T → ∞`. For `Ψ∞ = |·|²` the vectorial density is
//! `g(z, ν) = g_scal(|z|)`; sliceable laws use the vector-valued version of
//! the same one-dimensional problem.

mod cell;
mod curve;
mod vectorial;

pub use cell::{cell_energy, definitional_energy, gscal_cell, gscal_cell_with, CellOptions, CellProfile};
pub use curve::{gscal_curve, gscal_curve_with, CurvePoint, SurfaceDensityCurve};
pub use vectorial::{g_vectorial, sliced_cell, SlicedProfile};

use thiserror::Error;

use crate::material_laws::LawError;

#[derive(Debug, Error)]
pub enum SurfaceError {
    #[error(transparent)]
    Law(#[from] LawError),
    #[error("invalid cell problem: {0}")]
    InvalidInput(String),
    #[error("amplitude {t} outside the computed curve range [0, {max}]")]
    OutOfRange { t: f64, max: f64 },
    #[error("law {0} has neither euclidean recession nor the slicing property")]
    Unsupported(String),
    #[error("curve I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("curve format: {0}")]
    Format(#[from] serde_json::Error),
}

/// Energy of the explicit competitor profiles: `(c/2 + 3)·ℓ|z|` for
/// `ℓ|z| < 1`, else `3`.
pub fn competitor_upper_bound(z_norm: f64, ell: f64, c_growth: f64) -> f64 {
    let lz = ell * z_norm;
    if lz < 1.0 {
        (0.5 * c_growth + 3.0) * lz
    } else {
        3.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn competitor_bound_examples() {
        assert_eq!(competitor_upper_bound(0.0, 1.0, 1.0), 0.0);
        assert!((competitor_upper_bound(0.1, 1.0, 1.0) - 0.35).abs() < 1e-15);
        assert_eq!(competitor_upper_bound(2.0, 1.0, 1.0), 3.0);
        assert_eq!(competitor_upper_bound(0.5, 2.0, 4.0), 3.0);
    }
}
