//! Discretization and alternating minimization of
//!
//! ```text
//! F_ε(u, v) = ∫ f_ε²(v)Ψ(∇u) + (1−v)²/(4ε) + ε|∇v|² + η_ε Ψ(∇u) [+ ∫ |u − w|^q]
//! ```
//!
//! on structured 1D and 2D grids with P1 elements. The elastic term uses the
//! element average of `v`; the local damage term and the fidelity term are
//! lumped at the nodes.

mod energy;
mod grid;
mod solve;

pub use energy::{assemble_energy, energy_gradient};
pub use grid::{Face, GridSpec};
pub(crate) use solve::pointwise_damage;
pub use solve::{alternate_minimize, elastic_state, minimize_u, minimize_v, AlternationReport, RunConfig, StepReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::material_laws::LawError;
use crate::optim::OptimError;

#[derive(Debug, Error)]
pub enum PhaseFieldError {
    #[error(transparent)]
    Law(#[from] LawError),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("state does not match the grid: {0}")]
    InvalidState(String),
    #[error("non-finite {part} energy")]
    Assembly { part: &'static str },
    #[error("linear solve failed: {0}")]
    Solver(#[from] OptimError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyParts {
    pub elastic: f64,
    pub damage_local: f64,
    pub damage_gradient: f64,
    pub regularization: f64,
    pub fidelity: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.elastic + self.damage_local + self.damage_gradient + self.regularization + self.fidelity
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseFieldState {
    /// Components of the displacement per node, `m` consecutive values each.
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub m: usize,
    pub eps: f64,
    pub energy_parts: EnergyParts,
}

impl PhaseFieldState {
    /// `u ≡ 0`, `v ≡ 1`, energy parts not yet assembled.
    pub fn undamaged(grid: &GridSpec, m: usize, eps: f64) -> Self {
        let n = grid.node_count();
        Self {
            u: vec![0.0; n * m],
            v: vec![1.0; n],
            m,
            eps,
            energy_parts: EnergyParts::default(),
        }
    }

    pub fn energy(&self) -> f64 {
        self.energy_parts.total()
    }
}

/// `η_ε`, the small extra elasticity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum EtaRule {
    /// `η_ε = coef · ε^exponent`, with `exponent > 1`.
    Power { coef: f64, exponent: f64 },
}

impl Default for EtaRule {
    fn default() -> Self {
        EtaRule::Power {
            coef: 1.0,
            exponent: 1.5,
        }
    }
}

impl EtaRule {
    pub fn eta(&self, eps: f64) -> f64 {
        match *self {
            EtaRule::Power { coef, exponent } => coef * eps.powf(exponent),
        }
    }

    /// Requires `η_ε/ε < 1` at every `ε` of the list and decreasing along it.
    pub fn validate(&self, eps_list: &[f64]) -> Result<(), PhaseFieldError> {
        let EtaRule::Power { coef, exponent } = *self;
        if !(coef >= 0.0) || !(exponent > 1.0) {
            return Err(PhaseFieldError::InvalidConfig(format!(
                "eta rule needs coef >= 0 and exponent > 1, got {coef}, {exponent}"
            )));
        }
        let mut prev = f64::INFINITY;
        for &e in eps_list {
            let r = self.eta(e) / e;
            if !(r < 1.0) || r > prev {
                return Err(PhaseFieldError::InvalidConfig(format!("eta/eps = {r} at eps = {e}")));
            }
            prev = r;
        }
        Ok(())
    }
}

impl std::str::FromStr for EtaRule {
    type Err = PhaseFieldError;

    /// Accepts `eps^p` or `c*eps^p`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PhaseFieldError::InvalidConfig(format!("cannot parse eta rule '{s}'"));
        let (coef, rest) = match s.split_once('*') {
            Some((c, r)) => (c.trim().parse::<f64>().map_err(|_| bad())?, r.trim()),
            None => (1.0, s.trim()),
        };
        let p = rest.strip_prefix("eps^").ok_or_else(bad)?;
        let exponent = p.trim().parse::<f64>().map_err(|_| bad())?;
        Ok(EtaRule::Power { coef, exponent })
    }
}

/// A vector field on the grid, given in closed form or by nodal values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum VectorField {
    Constant {
        value: Vec<f64>,
    },
    /// `x ↦ A x + b` with `A` row-major `m × dim`.
    Affine {
        matrix: Vec<f64>,
        offset: Vec<f64>,
    },
    /// Node-major values, `m` per node.
    Nodal {
        values: Vec<f64>,
    },
}

impl VectorField {
    pub fn at_node(&self, grid: &GridSpec, k: usize, m: usize) -> Result<Vec<f64>, PhaseFieldError> {
        let d = grid.dim();
        match self {
            VectorField::Constant { value } => {
                check_len("constant value", value.len(), m)?;
                Ok(value.clone())
            }
            VectorField::Affine { matrix, offset } => {
                check_len("affine matrix", matrix.len(), m * d)?;
                check_len("affine offset", offset.len(), m)?;
                let x = grid.coords(k);
                Ok((0..m)
                    .map(|i| offset[i] + (0..d).map(|c| matrix[i * d + c] * x[c]).sum::<f64>())
                    .collect())
            }
            VectorField::Nodal { values } => {
                check_len("nodal values", values.len(), m * grid.node_count())?;
                Ok(values[k * m..(k + 1) * m].to_vec())
            }
        }
    }

    pub fn nodal(&self, grid: &GridSpec, m: usize) -> Result<Vec<f64>, PhaseFieldError> {
        let mut out = Vec::with_capacity(m * grid.node_count());
        for k in 0..grid.node_count() {
            out.extend(self.at_node(grid, k, m)?);
        }
        Ok(out)
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<(), PhaseFieldError> {
    if got != want {
        return Err(PhaseFieldError::InvalidConfig(format!(
            "{what} has {got} entries, expected {want}"
        )));
    }
    Ok(())
}

/// Dirichlet data for `u` on one face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementBc {
    pub face: Face,
    pub value: VectorField,
}

/// Dirichlet data for `v` on one face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DamageBc {
    pub face: Face,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub eta_rule: EtaRule,
    pub fidelity_w: Option<VectorField>,
    pub fidelity_q: f64,
    pub u_bc: Vec<DisplacementBc>,
    pub v_bc: Vec<DamageBc>,
    pub max_rounds: usize,
    /// Alternation stops when a round lowers the energy by less than this
    /// fraction.
    pub tol_energy: f64,
    /// Descent steps per displacement update for non-quadratic problems.
    pub descent_steps: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            eta_rule: EtaRule::default(),
            fidelity_w: None,
            fidelity_q: 2.0,
            u_bc: Vec::new(),
            v_bc: Vec::new(),
            max_rounds: 1000,
            tol_energy: 1e-9,
            descent_steps: 200,
        }
    }
}

impl SolveConfig {
    /// Bar `[0, L]` with `u(0) = 0` and `u(L) = t`.
    pub fn bar_loading(t: f64) -> Self {
        Self {
            u_bc: vec![
                DisplacementBc {
                    face: Face::XMin,
                    value: VectorField::Constant { value: vec![0.0] },
                },
                DisplacementBc {
                    face: Face::XMax,
                    value: VectorField::Constant { value: vec![t] },
                },
            ],
            ..Self::default()
        }
    }
}
