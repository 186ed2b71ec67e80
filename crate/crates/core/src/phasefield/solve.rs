use std::path::Path;

use serde::{Deserialize, Serialize};

use super::energy::Discrete;
use super::{EnergyParts, GridSpec, PhaseFieldError, PhaseFieldState, SolveConfig};
use crate::material_laws::{f_eps_sq_parts, LawSpec, MaterialLaw, PsiKind};
use crate::optim::{conjugate_gradient, dot, projected_newton, solve_tridiagonal, BoxProblem, ProjectedNewtonOptions};

/// Outcome of one subproblem solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iterations: usize,
    /// Relative residual of the last linear solve.
    pub residual: f64,
    /// The update was rejected because it would have raised the energy.
    pub rejected: bool,
    pub line_search_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternationReport {
    /// Energy parts of the initial state followed by one entry per round.
    pub trace: Vec<EnergyParts>,
    pub rounds: usize,
    pub converged: bool,
    /// Some damage line search ran out of halvings.
    pub stagnated: bool,
}

/// Symmetric operator `Σ_e c_e S_e + diag(mass)` restricted to free entries,
/// where `S_e` is the element stiffness matrix.
struct Operator<'a> {
    disc: &'a Discrete<'a>,
    coef: &'a [f64],
    /// Weight of the rank-one block `(1/k²)·11ᵀ` per element.
    rank_one: Option<&'a [f64]>,
    mass: &'a [f64],
}

impl Operator<'_> {
    fn apply(&self, free: &[bool], x: &[f64], y: &mut [f64]) {
        let mesh = &self.disc.mesh;
        let k = mesh.k;
        for i in 0..y.len() {
            y[i] = if free[i] { self.mass[i] * x[i] } else { 0.0 };
        }
        for (ei, e) in mesh.elements.iter().enumerate() {
            let c = self.coef[ei];
            let r = self.rank_one.map_or(0.0, |w| w[ei]);
            let mut mean = 0.0;
            for b in 0..k {
                let nb = e.nodes[b];
                if free[nb] {
                    mean += x[nb];
                }
            }
            mean /= k as f64;
            for a in 0..k {
                let na = e.nodes[a];
                if !free[na] {
                    continue;
                }
                let mut s = 0.0;
                for b in 0..k {
                    let nb = e.nodes[b];
                    if free[nb] {
                        s += mesh.stiffness(e, a, b) * x[nb];
                    }
                }
                y[na] += c * s + r * mean / k as f64;
            }
        }
    }

    /// Coupling of every node to the prescribed values on fixed nodes.
    fn apply_fixed(&self, free: &[bool], x: &[f64], y: &mut [f64]) {
        let mesh = &self.disc.mesh;
        let k = mesh.k;
        y.iter_mut().for_each(|v| *v = 0.0);
        for (ei, e) in mesh.elements.iter().enumerate() {
            let c = self.coef[ei];
            let r = self.rank_one.map_or(0.0, |w| w[ei]);
            for a in 0..k {
                let na = e.nodes[a];
                if !free[na] {
                    continue;
                }
                for b in 0..k {
                    let nb = e.nodes[b];
                    if !free[nb] {
                        y[na] += (c * mesh.stiffness(e, a, b) + r / (k * k) as f64) * x[nb];
                    }
                }
            }
        }
    }

    fn diagonal(&self, free: &[bool]) -> Vec<f64> {
        let mesh = &self.disc.mesh;
        let k = mesh.k;
        let mut d = self.mass.to_vec();
        for (ei, e) in mesh.elements.iter().enumerate() {
            let r = self.rank_one.map_or(0.0, |w| w[ei]);
            for a in 0..k {
                d[e.nodes[a]] += self.coef[ei] * mesh.stiffness(e, a, a) + r / (k * k) as f64;
            }
        }
        for (di, f) in d.iter_mut().zip(free) {
            if !f {
                *di = 1.0;
            }
        }
        d
    }

    /// Tridiagonal form for 1D meshes, identity rows on fixed entries.
    fn tridiagonal(&self, free: &[bool]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mesh = &self.disc.mesh;
        let n = mesh.node_count;
        let mut sub = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut diag = self.mass.to_vec();
        for (ei, e) in mesh.elements.iter().enumerate() {
            let (a, b) = (e.nodes[0], e.nodes[1]);
            let r = self.rank_one.map_or(0.0, |w| w[ei]) * 0.25;
            let c = self.coef[ei];
            diag[a] += c * mesh.stiffness(e, 0, 0) + r;
            diag[b] += c * mesh.stiffness(e, 1, 1) + r;
            let off = c * mesh.stiffness(e, 0, 1) + r;
            sup[a] += off;
            sub[b] += off;
        }
        for i in 0..n {
            if !free[i] {
                diag[i] = 1.0;
                sub[i] = 0.0;
                sup[i] = 0.0;
                if i > 0 {
                    sup[i - 1] = 0.0;
                }
                if i + 1 < n {
                    sub[i + 1] = 0.0;
                }
            }
        }
        (sub, diag, sup)
    }

    /// Solves `A_ff x_f = rhs_f`; entries on fixed rows of `x` are set to 0.
    fn solve(&self, free: &[bool], rhs: &[f64], x: &mut [f64], rtol: f64) -> Result<StepReport, PhaseFieldError> {
        let n = rhs.len();
        if self.disc.mesh.dim == 1 {
            let (sub, diag, sup) = self.tridiagonal(free);
            let mut r = rhs.to_vec();
            for i in 0..n {
                if !free[i] {
                    r[i] = 0.0;
                }
            }
            solve_tridiagonal(&sub, &diag, &sup, &r, x)?;
            return Ok(StepReport::default());
        }
        let diag = self.diagonal(free);
        let mut r = rhs.to_vec();
        for i in 0..n {
            if !free[i] {
                r[i] = 0.0;
                x[i] = 0.0;
            }
        }
        let rep = conjugate_gradient(|p, y| self.apply(free, p, y), &diag, &r, x, rtol, 10 * n)?;
        Ok(StepReport {
            iterations: rep.iterations,
            residual: rep.residual,
            ..StepReport::default()
        })
    }
}

fn is_quadratic(disc: &Discrete) -> bool {
    matches!(disc.law.kind(), PsiKind::EuclideanSquared) && (disc.w.is_none() || disc.q == 2.0)
}

/// Exact minimizer of `Σ_e w_e|∇u|² + Σ lumped|u − w|²` with the Dirichlet
/// data, one displacement component at a time.
fn quadratic_u(disc: &Discrete, v: &[f64], u: &mut [f64]) -> Result<StepReport, PhaseFieldError> {
    let m = disc.m;
    let n = disc.mesh.node_count;
    let coef: Vec<f64> = disc.u_weights(v).iter().map(|w| 2.0 * w).collect();
    let mass: Vec<f64> = match &disc.w {
        Some(_) => disc.mesh.lumped.iter().map(|l| 2.0 * l).collect(),
        None => vec![0.0; n],
    };
    let op = Operator {
        disc,
        coef: &coef,
        rank_one: None,
        mass: &mass,
    };
    let mut report = StepReport::default();
    let mut free = vec![true; n];
    let mut fixed_vals = vec![0.0; n];
    let mut coupling = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut x = vec![0.0; n];
    for i in 0..m {
        for k in 0..n {
            match disc.u_fixed[k * m + i] {
                Some(val) => {
                    free[k] = false;
                    fixed_vals[k] = val;
                }
                None => {
                    free[k] = true;
                    fixed_vals[k] = 0.0;
                }
            }
            x[k] = if free[k] { u[k * m + i] } else { 0.0 };
        }
        op.apply_fixed(&free, &fixed_vals, &mut coupling);
        for k in 0..n {
            let w = disc.w.as_ref().map_or(0.0, |w| w[k * m + i]);
            rhs[k] = mass[k] * w - coupling[k];
        }
        let rep = op.solve(&free, &rhs, &mut x, 1e-10)?;
        report.iterations = report.iterations.max(rep.iterations);
        report.residual = report.residual.max(rep.residual);
        for k in 0..n {
            u[k * m + i] = if free[k] { x[k] } else { fixed_vals[k] };
        }
    }
    Ok(report)
}

/// Armijo descent preconditioned by the weighted Laplacian `Σ 2 w_e S_e`.
fn descent_u(disc: &Discrete, v: &[f64], u: &mut [f64], steps: usize) -> Result<StepReport, PhaseFieldError> {
    let m = disc.m;
    let n = disc.mesh.node_count;
    let coef: Vec<f64> = disc.u_weights(v).iter().map(|w| 2.0 * w).collect();
    let mass: Vec<f64> = match &disc.w {
        Some(_) => disc.mesh.lumped.iter().map(|l| 2.0 * l).collect(),
        None => vec![0.0; n],
    };
    let op = Operator {
        disc,
        coef: &coef,
        rank_one: None,
        mass: &mass,
    };
    let mut report = StepReport::default();
    let mut g = vec![0.0; n * m];
    let mut d = vec![0.0; n * m];
    let mut trial = vec![0.0; n * m];
    let mut comp_rhs = vec![0.0; n];
    let mut comp_x = vec![0.0; n];
    let mut free = vec![true; n];
    let mut energy = disc.u_energy(u, v);
    for it in 0..steps {
        report.iterations = it + 1;
        disc.grad_u(u, v, &mut g);
        for i in 0..m {
            for k in 0..n {
                free[k] = disc.u_fixed[k * m + i].is_none();
                comp_rhs[k] = if free[k] { g[k * m + i] } else { 0.0 };
                comp_x[k] = 0.0;
            }
            let ok = op.solve(&free, &comp_rhs, &mut comp_x, 1e-8).is_ok();
            let diag = op.diagonal(&free);
            for k in 0..n {
                d[k * m + i] = if !free[k] {
                    0.0
                } else if ok {
                    comp_x[k]
                } else {
                    comp_rhs[k] / diag[k]
                };
            }
        }
        let slope = dot(&g, &d);
        if !(slope > 0.0) {
            break;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=40 {
            for j in 0..n * m {
                trial[j] = u[j] - step * d[j];
            }
            let e = disc.u_energy(&trial, v);
            if e.is_finite() && e <= energy - 1e-4 * step * slope {
                accepted = Some(e);
                break;
            }
            step *= 0.5;
        }
        let Some(e) = accepted else {
            report.line_search_failed = true;
            break;
        };
        u.copy_from_slice(&trial);
        let dec = energy - e;
        energy = e;
        if dec <= 1e-15 * (1.0 + energy) {
            break;
        }
    }
    Ok(report)
}

fn u_step(disc: &Discrete, v: &[f64], u: &mut [f64], steps: usize) -> Result<StepReport, PhaseFieldError> {
    let before = disc.u_energy(u, v);
    let mut cand = u.to_vec();
    let mut rep = if is_quadratic(disc) {
        quadratic_u(disc, v, &mut cand)?
    } else {
        descent_u(disc, v, &mut cand, steps)?
    };
    if disc.u_energy(&cand, v) <= before {
        u.copy_from_slice(&cand);
    } else {
        rep.rejected = true;
    }
    Ok(rep)
}

/// The damage subproblem at fixed element strain energies `psi`.
struct VProblem<'a> {
    disc: &'a Discrete<'a>,
    psi: &'a [f64],
}

impl BoxProblem for VProblem<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let (a, b, c) = self.disc.damage_parts(self.psi, x);
        a + b + c
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        self.disc.grad_v(self.psi, x, g);
    }

    fn newton_direction(&self, x: &[f64], g: &[f64], free: &[bool], d: &mut [f64]) -> bool {
        let disc = self.disc;
        let mesh = &disc.mesh;
        // elastic curvature acts on the element mean: (d2·Ψ·vol) (1/k²) 11ᵀ
        let rank_one: Vec<f64> = mesh
            .elements
            .iter()
            .zip(self.psi)
            .map(|(e, &p)| {
                let (_, _, d2) = f_eps_sq_parts(mesh.mean_v(e, x), disc.eps, disc.ell);
                e.vol * d2 * p
            })
            .collect();
        let coef: Vec<f64> = mesh.elements.iter().map(|e| 2.0 * e.vol * disc.eps).collect();
        let mass: Vec<f64> = mesh.lumped.iter().map(|l| l / (2.0 * disc.eps)).collect();
        if rank_one.iter().any(|r| !r.is_finite()) {
            return false;
        }
        let op = Operator {
            disc,
            coef: &coef,
            rank_one: Some(&rank_one),
            mass: &mass,
        };
        d.iter_mut().for_each(|v| *v = 0.0);
        op.solve(free, g, d, 1e-8).is_ok() && d.iter().all(|v| v.is_finite())
    }
}

/// Minimizer over `s ∈ [0, 1]` of `f_ε²(s)P + (1−s)²/(4ε)`. The function is
/// convex below `γ_ε` and equals `P + (1−s)²/(4ε)` above it.
pub(crate) fn pointwise_damage(p: f64, eps: f64, ell: f64) -> f64 {
    let gamma = crate::material_laws::gamma_eps(eps, ell);
    let phi = |s: f64| f_eps_sq_parts(s, eps, ell).0 * p + (1.0 - s) * (1.0 - s) / (4.0 * eps);
    let dphi = |s: f64| p * f_eps_sq_parts(s, eps, ell).1 - (1.0 - s) / (2.0 * eps);
    let (mut a, mut b) = (0.0, gamma);
    if dphi(b * (1.0 - 1e-15)) <= 0.0 {
        a = b;
    } else {
        for _ in 0..60 {
            let mid = 0.5 * (a + b);
            if dphi(mid) > 0.0 {
                b = mid;
            } else {
                a = mid;
            }
        }
    }
    if phi(a) < phi(1.0) {
        a
    } else {
        1.0
    }
}

/// Projected Newton from the current `v` and from the nodewise minimizer of
/// the local terms; the lower result is kept. The second start escapes the
/// flat region above `γ_ε`, where every `v` with `v ≥ γ_ε` on the support of
/// the strain is stationary for the elastic term.
fn v_step(disc: &Discrete, u: &[f64], v: &mut [f64]) -> StepReport {
    let psi = disc.element_psi(u);
    let problem = VProblem { disc, psi: &psi };
    let n = v.len();
    let mut lo = vec![0.0; n];
    let mut hi = vec![1.0; n];
    for (k, f) in disc.v_fixed.iter().enumerate() {
        if let Some(val) = f {
            lo[k] = *val;
            hi[k] = *val;
            v[k] = *val;
        }
    }
    let opts = ProjectedNewtonOptions {
        max_iter: 60,
        tol_grad: 1e-14,
        tol_decrease: 1e-15,
        max_halvings: 40,
    };
    let mut nodal_psi = vec![0.0; n];
    let k = disc.mesh.k as f64;
    for (e, p) in disc.mesh.elements.iter().zip(&psi) {
        for a in 0..disc.mesh.k {
            nodal_psi[e.nodes[a]] += e.vol * p / k;
        }
    }
    let mut alt: Vec<f64> = (0..n)
        .map(|i| {
            if lo[i] == hi[i] {
                lo[i]
            } else {
                pointwise_damage(nodal_psi[i] / disc.mesh.lumped[i], disc.eps, disc.ell)
            }
        })
        .collect();
    let differs = alt.iter().zip(v.iter()).any(|(a, b)| (a - b).abs() > 1e-12);
    let rep = projected_newton(&problem, v, &lo, &hi, opts);
    let mut line_search_failed = rep.line_search_failed;
    let mut iterations = rep.iterations;
    if differs {
        let rep2 = projected_newton(&problem, &mut alt, &lo, &hi, opts);
        iterations += rep2.iterations;
        if rep2.value < rep.value {
            v.copy_from_slice(&alt);
            line_search_failed = rep2.line_search_failed;
        }
    }
    StepReport {
        iterations,
        residual: 0.0,
        rejected: false,
        line_search_failed,
    }
}

/// Updates `u` at fixed `v`: an exact linear solve for `Ψ = |·|²` with
/// quadratic fidelity, preconditioned Armijo descent otherwise. The energy
/// does not increase.
pub fn minimize_u(
    state: &mut PhaseFieldState,
    law: &MaterialLaw,
    grid: &GridSpec,
    cfg: &SolveConfig,
) -> Result<StepReport, PhaseFieldError> {
    let disc = Discrete::new(law, grid, cfg, state.eps)?;
    disc.check_shapes(&state.u, &state.v)?;
    let rep = u_step(&disc, &state.v, &mut state.u, cfg.descent_steps)?;
    state.energy_parts = disc.parts(&state.u, &state.v)?;
    Ok(rep)
}

/// Updates `v` at fixed `u` by projected Newton on `[0, 1]`. Above `γ_ε` the
/// elastic term does not depend on `v`, so the Newton model there only sees
/// the damage terms.
pub fn minimize_v(
    state: &mut PhaseFieldState,
    law: &MaterialLaw,
    grid: &GridSpec,
    cfg: &SolveConfig,
) -> Result<StepReport, PhaseFieldError> {
    let disc = Discrete::new(law, grid, cfg, state.eps)?;
    disc.check_shapes(&state.u, &state.v)?;
    let rep = v_step(&disc, &state.u, &mut state.v);
    state.energy_parts = disc.parts(&state.u, &state.v)?;
    Ok(rep)
}

/// `v ≡ 1` (up to damage boundary data) and the elastic equilibrium `u`.
pub fn elastic_state(
    law: &MaterialLaw,
    grid: &GridSpec,
    cfg: &SolveConfig,
    eps: f64,
) -> Result<PhaseFieldState, PhaseFieldError> {
    let disc = Discrete::new(law, grid, cfg, eps)?;
    let mut state = PhaseFieldState::undamaged(grid, law.m(), eps);
    disc.impose_bc(&mut state.u, &mut state.v);
    // harmonic extension of the boundary data, then the actual law
    quadratic_u(&disc, &state.v, &mut state.u)?;
    if !is_quadratic(&disc) {
        u_step(&disc, &state.v, &mut state.u, cfg.descent_steps)?;
    }
    state.energy_parts = disc.parts(&state.u, &state.v)?;
    Ok(state)
}

/// Alternates damage and displacement updates, damage first, until a round
/// lowers the energy by less than `tol_energy` relative. Each update is kept
/// only if the assembled energy does not increase, so the trace is
/// nonincreasing.
pub fn alternate_minimize(
    init: &PhaseFieldState,
    law: &MaterialLaw,
    grid: &GridSpec,
    cfg: &SolveConfig,
) -> Result<(PhaseFieldState, AlternationReport), PhaseFieldError> {
    let disc = Discrete::new(law, grid, cfg, init.eps)?;
    disc.check_shapes(&init.u, &init.v)?;
    if !disc.satisfies_bc(&init.u, &init.v, 1e-12) {
        return Err(PhaseFieldError::InvalidState(
            "initial state violates the Dirichlet data".into(),
        ));
    }
    let mut u = init.u.clone();
    let mut v = init.v.clone();
    let mut parts = disc.parts(&u, &v)?;
    let mut report = AlternationReport {
        trace: vec![parts],
        rounds: 0,
        converged: false,
        stagnated: false,
    };
    let mut cand_u = u.clone();
    let mut cand_v = v.clone();
    for round in 0..cfg.max_rounds {
        report.rounds = round + 1;
        let start = parts.total();
        cand_v.copy_from_slice(&v);
        let vr = v_step(&disc, &u, &mut cand_v);
        report.stagnated |= vr.line_search_failed;
        let p = disc.parts(&u, &cand_v)?;
        if p.total() <= parts.total() {
            v.copy_from_slice(&cand_v);
            parts = p;
        }
        cand_u.copy_from_slice(&u);
        u_step(&disc, &v, &mut cand_u, cfg.descent_steps)?;
        let p = disc.parts(&cand_u, &v)?;
        if p.total() <= parts.total() {
            u.copy_from_slice(&cand_u);
            parts = p;
        }
        report.trace.push(parts);
        let total = parts.total();
        if total == 0.0 || start - total <= cfg.tol_energy * total {
            report.converged = true;
            break;
        }
    }
    let state = PhaseFieldState {
        u,
        v,
        m: init.m,
        eps: init.eps,
        energy_parts: parts,
    };
    Ok((state, report))
}

/// A complete single-`ε` run as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub law: LawSpec,
    pub eps: f64,
    #[serde(default)]
    pub solve: SolveConfig,
}

impl RunConfig {
    pub fn run(&self) -> Result<(PhaseFieldState, AlternationReport), PhaseFieldError> {
        let law = self.law.build()?;
        let init = elastic_state(&law, &self.grid, &self.solve, self.eps)?;
        alternate_minimize(&init, &law, &self.grid, &self.solve)
    }

    /// Writes nodal `x, [y,] u_0.., v` to `path` and the energy parts and
    /// trace to `path` with extension `.json`.
    pub fn write_outputs(
        &self,
        state: &PhaseFieldState,
        report: &AlternationReport,
        path: &Path,
    ) -> Result<(), PhaseFieldError> {
        let tmp = path.with_extension("csv.tmp");
        {
            let mut w = csv::Writer::from_path(&tmp).map_err(csv_err)?;
            let mut header: Vec<String> = vec!["x".into()];
            if self.grid.dim() == 2 {
                header.push("y".into());
            }
            header.extend((0..state.m).map(|i| format!("u{i}")));
            header.push("v".into());
            w.write_record(&header).map_err(csv_err)?;
            for k in 0..self.grid.node_count() {
                let c = self.grid.coords(k);
                let mut row: Vec<String> = vec![c[0].to_string()];
                if self.grid.dim() == 2 {
                    row.push(c[1].to_string());
                }
                row.extend((0..state.m).map(|i| state.u[k * state.m + i].to_string()));
                row.push(state.v[k].to_string());
                w.write_record(&row).map_err(csv_err)?;
            }
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        let sidecar = serde_json::json!({
            "config": self,
            "energy_parts": state.energy_parts,
            "total": state.energy(),
            "report": report,
        });
        let side = path.with_extension("json");
        let tmp = side.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(&sidecar)?)?;
        std::fs::rename(&tmp, &side)?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> PhaseFieldError {
    PhaseFieldError::Io(std::io::Error::other(e.to_string()))
}
