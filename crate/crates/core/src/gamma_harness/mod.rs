//! ε-sweeps of the discrete functional against the limit functional `F₀`
//! on a bar, plus result persistence.

mod limit;
mod persist;
mod sweep;

pub use limit::{crossover_load, eval_f0_1d, limit_min_1d, sample_profile, FidelitySpec, LimitMinimum, LimitProfile1D};
pub use persist::{config_hash, persist_results, reload_results, SweepManifest};
pub use sweep::{gamma_sweep, EpsRecord, GammaSweepResult, GridRule, SweepConfig, SweepGates, SweepTolerances};

use thiserror::Error;

use crate::envelopes::EnvelopeError;
use crate::material_laws::LawError;
use crate::phasefield::PhaseFieldError;
use crate::surface_density::SurfaceError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    PhaseField(#[from] PhaseFieldError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error("invalid sweep: {0}")]
    InvalidConfig(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
