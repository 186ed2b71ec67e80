use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::limit::{limit_min_1d, FidelitySpec, LimitMinimum};
use super::HarnessError;
use crate::material_laws::{BuiltinPsi, LawSpec, MaterialLaw};
use crate::phasefield::{
    alternate_minimize, assemble_energy, elastic_state, minimize_u, pointwise_damage, AlternationReport, EtaRule,
    GridSpec, PhaseFieldState, SolveConfig,
};
use crate::surface_density::SurfaceDensityCurve;

/// Grid coupling: at least `nodes_per_eps` nodes per length `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRule {
    pub nodes_per_eps: f64,
}

impl Default for GridRule {
    fn default() -> Self {
        Self { nodes_per_eps: 20.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepTolerances {
    pub max_rounds: usize,
    pub tol_energy: f64,
    /// Largest accepted relative change of the minimum under halving of the
    /// spacing.
    pub refinement: f64,
    pub check_refinement: bool,
}

impl Default for SweepTolerances {
    fn default() -> Self {
        Self {
            max_rounds: 4000,
            tol_energy: 1e-10,
            refinement: 0.01,
            check_refinement: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepGates {
    pub max_final_rel_error: f64,
    #[serde(default = "yes")]
    pub require_monotone: bool,
}

fn yes() -> bool {
    true
}

fn default_psi() -> BuiltinPsi {
    BuiltinPsi::EuclideanSquared
}

/// `η_ε = ε³` keeps the regularization of an open crack, about
/// `t·sqrt(η_ε/ε)`, small against the surface energy.
fn sweep_eta() -> EtaRule {
    EtaRule::Power {
        coef: 1.0,
        exponent: 3.0,
    }
}

/// Experiment on the bar `[0, L]`: either `u(0) = 0, u(L) = t_load`, or free
/// ends with a fidelity term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(default)]
    pub t_load: Option<f64>,
    #[serde(default)]
    pub fidelity: Option<FidelitySpec>,
    pub ell: f64,
    #[serde(default = "default_psi")]
    pub psi: BuiltinPsi,
    pub eps: Vec<f64>,
    #[serde(default = "sweep_eta")]
    pub eta_rule: EtaRule,
    #[serde(default)]
    pub grid_rule: GridRule,
    #[serde(default)]
    pub tolerances: SweepTolerances,
    #[serde(default)]
    pub gates: Option<SweepGates>,
}

impl SweepConfig {
    pub fn dirichlet(length: f64, t_load: f64, ell: f64, eps: Vec<f64>) -> Self {
        Self {
            length,
            t_load: Some(t_load),
            fidelity: None,
            ell,
            psi: BuiltinPsi::EuclideanSquared,
            eps,
            eta_rule: sweep_eta(),
            grid_rule: GridRule::default(),
            tolerances: SweepTolerances::default(),
            gates: None,
        }
    }

    pub fn law(&self) -> Result<MaterialLaw, HarnessError> {
        Ok(LawSpec {
            psi: self.psi,
            ell: self.ell,
            m: 1,
            n: 1,
        }
        .build()?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.length > 0.0) {
            return Err(HarnessError::InvalidConfig(format!(
                "L must be positive, got {}",
                self.length
            )));
        }
        if self.t_load.is_some() == self.fidelity.is_some() {
            return Err(HarnessError::InvalidConfig(
                "give exactly one of t_load and fidelity".into(),
            ));
        }
        if self.eps.iter().any(|e| !(*e > 0.0)) || self.eps.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(HarnessError::InvalidConfig(
                "eps list must be positive and strictly decreasing".into(),
            ));
        }
        if !(self.grid_rule.nodes_per_eps >= 20.0) {
            return Err(HarnessError::InvalidConfig(
                "the grid needs at least 20 nodes per eps".into(),
            ));
        }
        self.eta_rule.validate(&self.eps)?;
        Ok(())
    }

    pub fn grid(&self, eps: f64) -> GridSpec {
        let cells = (self.grid_rule.nodes_per_eps * self.length / eps).ceil() as usize;
        GridSpec::bar(self.length, cells.max(2) + 1)
    }

    fn solve_config(&self) -> SolveConfig {
        let mut cfg = match self.t_load {
            Some(t) => SolveConfig::bar_loading(t),
            None => SolveConfig::default(),
        };
        if let Some(f) = &self.fidelity {
            cfg.fidelity_w = Some(f.w.clone());
            cfg.fidelity_q = f.q;
        }
        cfg.eta_rule = self.eta_rule;
        cfg.max_rounds = self.tolerances.max_rounds;
        cfg.tol_energy = self.tolerances.tol_energy;
        cfg
    }
}

/// Per-`ε` details of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsRecord {
    pub eps: f64,
    pub nodes: usize,
    pub rounds: usize,
    pub converged: bool,
    pub stagnated: bool,
    /// Name of the start that produced the minimum.
    pub seed: String,
    /// Smallest energy among the explicit constructions (recovery state and
    /// jump competitors) on the same grid.
    pub recovery_bound: f64,
    pub limsup_ok: bool,
    /// `Σ_e |e| min_s [(f_ε²(s)+η)Ψ_e + (1−s)²/(4ε)]` at the computed
    /// displacement, a lower bound for its energy.
    pub oracle_bound: f64,
    pub refined_min: Option<f64>,
    pub under_resolved: bool,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSweepResult {
    pub eps_list: Vec<f64>,
    pub discrete_min: Vec<f64>,
    pub limit_value: f64,
    pub rel_errors: Vec<f64>,
    pub runtimes: Vec<f64>,
    pub limit: LimitMinimum,
    pub records: Vec<EpsRecord>,
    /// Relative errors nonincreasing over the last three `ε`.
    pub monotone_tail: bool,
    pub flagged: bool,
    pub gate_failures: Vec<String>,
}

struct Solved {
    state: PhaseFieldState,
    report: AlternationReport,
    seed: String,
    recovery_bound: f64,
}

fn notch(grid: &GridSpec, eps: f64, center: f64, depth: f64) -> Vec<f64> {
    (0..grid.node_count())
        .map(|k| {
            let x = grid.coords(k)[0];
            1.0 - depth * (-(x - center).abs() / (2.0 * eps)).exp()
        })
        .collect()
}

/// Runs the alternation from several starts and keeps the lowest energy:
/// the elastic state, the recovery state `v = 1 − sqrt(2ℓε)Ψ^{1/4}` and
/// notched damage profiles seeded from the limit minimizer.
fn solve_eps(
    cfg: &SweepConfig,
    law: &MaterialLaw,
    limit: &LimitMinimum,
    eps: f64,
    grid: &GridSpec,
) -> Result<Solved, HarnessError> {
    let scfg = cfg.solve_config();
    let ell = law.ell();
    let elastic = elastic_state(law, grid, &scfg, eps)?;
    let mut seeds: Vec<(String, PhaseFieldState)> = Vec::new();
    // recovery state: affine displacement, uniform damage
    let slope = match cfg.t_load {
        Some(t) => t / cfg.length,
        None => limit.profile.slope_segments.first().map_or(0.0, |s| s.1[0]),
    };
    let v_rec = (1.0 - (2.0 * ell * eps).sqrt() * (slope * slope).powf(0.25)).clamp(0.0, 1.0);
    let mut rec = elastic.clone();
    rec.v.iter_mut().for_each(|v| *v = v_rec);
    if cfg.t_load.is_none() {
        minimize_u(&mut rec, law, grid, &scfg)?;
    } else {
        rec.energy_parts = assemble_energy(&rec, law, grid, &scfg)?;
    }
    let mut recovery_bound = rec.energy();
    seeds.push(("elastic".into(), elastic));
    seeds.push(("recovery".into(), rec));
    // jump competitors at the limit jump and at the full load
    let full = cfg.t_load.map_or(limit.jump.abs(), f64::abs);
    let mut jumps = vec![limit.jump.abs(), limit.fracture_jump.abs(), full];
    jumps.retain(|s| *s > 0.0);
    jumps.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let center = match (&cfg.fidelity, limit.profile.slope_segments.len()) {
        (Some(_), 2) => limit.profile.slope_segments[0].0,
        _ => 0.5 * cfg.length,
    };
    for s in jumps {
        let depth = (ell * s).min(1.0).sqrt();
        let mut st = seeds[0].1.clone();
        st.v = notch(grid, eps, center, depth);
        minimize_u(&mut st, law, grid, &scfg)?;
        recovery_bound = recovery_bound.min(st.energy());
        seeds.push((format!("jump {s:.4}"), st));
    }
    let mut best: Option<Solved> = None;
    for (name, init) in seeds {
        let (state, report) = alternate_minimize(&init, law, grid, &scfg)?;
        if best.as_ref().is_none_or(|b| state.energy() < b.state.energy()) {
            best = Some(Solved {
                state,
                report,
                seed: name,
                recovery_bound,
            });
        }
    }
    let mut best = best.expect("at least one seed");
    best.recovery_bound = recovery_bound;
    Ok(best)
}

fn oracle_bound(state: &PhaseFieldState, law: &MaterialLaw, grid: &GridSpec, eta: f64) -> f64 {
    let h = grid.spacing()[0];
    let m = state.m;
    let n = grid.node_count();
    let mut s = 0.0;
    let mut xi = vec![0.0; m];
    for c in 0..n - 1 {
        for i in 0..m {
            xi[i] = (state.u[(c + 1) * m + i] - state.u[c * m + i]) / h;
        }
        let p = law
            .psi_eval(&crate::MatrixArg::new(m, 1, &xi).expect("m x 1"))
            .unwrap_or(0.0);
        let v = pointwise_damage(p, state.eps, law.ell());
        let (fe2, _, _) = crate::material_laws::f_eps_sq_parts(v, state.eps, law.ell());
        s += h * ((fe2 + eta) * p + (1.0 - v) * (1.0 - v) / (4.0 * state.eps));
    }
    s
}

/// Runs the configured `ε` ladder and compares each discrete minimum with the
/// minimum of the limit functional computed from `curve`.
pub fn gamma_sweep(cfg: &SweepConfig, curve: &SurfaceDensityCurve) -> Result<GammaSweepResult, HarnessError> {
    cfg.validate()?;
    let law = cfg.law()?;
    let limit = limit_min_1d(
        cfg.t_load.unwrap_or(0.0),
        cfg.length,
        &law,
        curve,
        cfg.fidelity.as_ref(),
    )?;
    let limit_value = limit.value;
    let runs: Vec<Result<(EpsRecord, f64, f64), HarnessError>> = cfg
        .eps
        .par_iter()
        .map(|&eps| {
            let clock = Instant::now();
            let grid = cfg.grid(eps);
            let solved = solve_eps(cfg, &law, &limit, eps, &grid)?;
            let energy = solved.state.energy();
            let refined_min = if cfg.tolerances.check_refinement {
                Some(solve_eps(cfg, &law, &limit, eps, &grid.refined())?.state.energy())
            } else {
                None
            };
            let under_resolved =
                refined_min.is_some_and(|r| (r - energy).abs() > cfg.tolerances.refinement * energy.abs().max(1e-12));
            let record = EpsRecord {
                eps,
                nodes: grid.node_count(),
                rounds: solved.report.rounds,
                converged: solved.report.converged,
                stagnated: solved.report.stagnated,
                seed: solved.seed,
                recovery_bound: solved.recovery_bound,
                limsup_ok: energy <= solved.recovery_bound + 1e-9,
                oracle_bound: oracle_bound(&solved.state, &law, &grid, cfg.eta_rule.eta(eps)),
                refined_min,
                under_resolved,
                u: solved.state.u,
                v: solved.state.v,
            };
            Ok((record, energy, clock.elapsed().as_secs_f64()))
        })
        .collect();
    let mut records = Vec::new();
    let mut discrete_min = Vec::new();
    let mut runtimes = Vec::new();
    for r in runs {
        let (rec, e, t) = r?;
        records.push(rec);
        discrete_min.push(e);
        runtimes.push(t);
    }
    let rel_errors: Vec<f64> = discrete_min
        .iter()
        .map(|d| {
            if limit_value > 0.0 {
                (d - limit_value).abs() / limit_value
            } else {
                d.abs()
            }
        })
        .collect();
    let k = rel_errors.len();
    let tail = &rel_errors[k.saturating_sub(3)..];
    let monotone_tail = tail.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
    let mut gate_failures = Vec::new();
    if let Some(g) = cfg.gates {
        if g.require_monotone && !monotone_tail {
            gate_failures.push(format!(
                "relative errors not nonincreasing over the last three eps: {tail:?}"
            ));
        }
        if let Some(last) = rel_errors.last() {
            if !(*last <= g.max_final_rel_error) {
                gate_failures.push(format!(
                    "final relative error {last:.4} exceeds {:.4}",
                    g.max_final_rel_error
                ));
            }
        }
    }
    let flagged = !monotone_tail || records.iter().any(|r| r.under_resolved || !r.limsup_ok);
    Ok(GammaSweepResult {
        eps_list: cfg.eps.clone(),
        discrete_min,
        limit_value,
        rel_errors,
        runtimes,
        limit,
        records,
        monotone_tail,
        flagged,
        gate_failures,
    })
}
