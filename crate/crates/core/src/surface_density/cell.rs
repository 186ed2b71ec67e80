use serde::{Deserialize, Serialize};

use super::SurfaceError;
use crate::optim::{projected_newton, solve_tridiagonal, BoxProblem, ProjectedNewtonOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellOptions {
    pub max_rounds: usize,
    /// Alternation stops once a round lowers the energy by less than this.
    pub tol_energy: f64,
    /// Lower cap on the cell average of `β`, used only to form the weights of
    /// the displacement step.
    pub beta_floor: f64,
}

impl Default for CellOptions {
    fn default() -> Self {
        Self {
            max_rounds: 500,
            tol_energy: 1e-10,
            beta_floor: 1e-9,
        }
    }
}

/// Discrete optimal pair `(α, β)` of the cell problem on `(−T/2, T/2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellProfile {
    pub t: f64,
    pub ell: f64,
    #[serde(rename = "T")]
    pub t_len: f64,
    /// Number of uniform cells; `alpha` and `beta` hold `cells + 1` nodal values.
    pub cells: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub energy: f64,
    pub rounds: usize,
    pub converged: bool,
    pub stagnated: bool,
    /// Energy after each alternation round.
    pub trace: Vec<f64>,
}

impl CellProfile {
    pub fn spacing(&self) -> f64 {
        self.t_len / self.cells as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        -0.5 * self.t_len + self.spacing() * i as f64
    }

    /// Energy recomputed from the stored fields.
    pub fn recompute_energy(&self) -> f64 {
        cell_energy(self.ell, self.spacing(), &self.alpha, &self.beta)
    }

    /// `Σ (1−β̄)·sqrt(f²(β̄)Δα² + Δβ²)`, a lower bound for the energy that is
    /// attained by exact minimizers.
    pub fn definitional_energy(&self) -> f64 {
        definitional_energy(self.ell, &self.alpha, &self.beta)
    }
}

/// `f²(b) = ℓ²b²/(1−b)²`, infinite at `b = 1`.
#[inline]
pub(crate) fn f2(b: f64, ell: f64) -> f64 {
    if b >= 1.0 {
        f64::INFINITY
    } else {
        let r = ell * b / (1.0 - b);
        r * r
    }
}

#[inline]
fn f2_d1(b: f64, ell: f64) -> f64 {
    let om = 1.0 - b;
    2.0 * ell * ell * b / (om * om * om)
}

#[inline]
fn f2_d2(b: f64, ell: f64) -> f64 {
    let om = 1.0 - b;
    ell * ell * (2.0 + 4.0 * b) / (om * om * om * om)
}

/// `f²(b)·a` with the convention `∞·0 = 0` (no strain in a rigid cell).
#[inline]
fn elastic_density(b: f64, a: f64, ell: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        f2(b, ell) * a
    }
}

/// Cell energy for given per-cell strain densities `a_c` (`|α'|²` in the
/// scalar problem).
pub(crate) fn beta_energy(ell: f64, h: f64, a: &[f64], beta: &[f64]) -> f64 {
    let n = a.len();
    let mut e = 0.0;
    for c in 0..n {
        let b = 0.5 * (beta[c] + beta[c + 1]);
        let db = beta[c + 1] - beta[c];
        e += h * elastic_density(b, a[c], ell) + db * db / h;
    }
    for (i, &bi) in beta.iter().enumerate() {
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        e += w * h * 0.25 * (1.0 - bi) * (1.0 - bi);
    }
    e
}

/// Discrete cell energy of `(α, β)` on a uniform grid of spacing `h`.
pub fn cell_energy(ell: f64, h: f64, alpha: &[f64], beta: &[f64]) -> f64 {
    let a: Vec<f64> = alpha
        .windows(2)
        .map(|w| {
            let s = (w[1] - w[0]) / h;
            s * s
        })
        .collect();
    beta_energy(ell, h, &a, beta)
}

pub fn definitional_energy(ell: f64, alpha: &[f64], beta: &[f64]) -> f64 {
    let mut d = 0.0;
    for c in 0..alpha.len() - 1 {
        let b = 0.5 * (beta[c] + beta[c + 1]);
        let da = alpha[c + 1] - alpha[c];
        let db = beta[c + 1] - beta[c];
        let el = elastic_density(b, da * da, ell);
        d += (1.0 - b).abs() * (el + db * db).sqrt();
    }
    d
}

/// The damage subproblem at fixed strains, on the box `[0, 1]` with the end
/// nodes clamped to 1.
pub(crate) struct BetaProblem<'a> {
    pub ell: f64,
    pub h: f64,
    pub a: &'a [f64],
}

impl BoxProblem for BetaProblem<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        beta_energy(self.ell, self.h, self.a, x)
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        let n = self.a.len();
        let h = self.h;
        for (i, gi) in g.iter_mut().enumerate() {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            *gi = -w * h * 0.5 * (1.0 - x[i]);
        }
        for c in 0..n {
            let b = 0.5 * (x[c] + x[c + 1]);
            let db = (x[c + 1] - x[c]) / h;
            let el = if self.a[c] == 0.0 {
                0.0
            } else {
                0.5 * h * self.a[c] * f2_d1(b, self.ell)
            };
            g[c] += el - 2.0 * db;
            g[c + 1] += el + 2.0 * db;
        }
    }

    fn newton_direction(&self, x: &[f64], g: &[f64], free: &[bool], d: &mut [f64]) -> bool {
        let n = self.a.len();
        let h = self.h;
        let nn = n + 1;
        let mut sub = vec![0.0; nn];
        let mut diag = vec![0.0; nn];
        let mut sup = vec![0.0; nn];
        for (i, di) in diag.iter_mut().enumerate() {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            *di = w * h * 0.5;
        }
        for c in 0..n {
            let b = 0.5 * (x[c] + x[c + 1]);
            let k = if self.a[c] == 0.0 {
                0.0
            } else {
                0.25 * h * self.a[c] * f2_d2(b, self.ell)
            };
            let lap = 2.0 / h;
            diag[c] += k + lap;
            diag[c + 1] += k + lap;
            sup[c] += k - lap;
            sub[c + 1] += k - lap;
        }
        let mut rhs = vec![0.0; nn];
        for i in 0..nn {
            if free[i] {
                rhs[i] = g[i];
            } else {
                diag[i] = 1.0;
                sub[i] = 0.0;
                sup[i] = 0.0;
                if i > 0 {
                    sup[i - 1] = 0.0;
                }
                if i + 1 < nn {
                    sub[i + 1] = 0.0;
                }
            }
        }
        if diag.iter().any(|v| !v.is_finite()) {
            return false;
        }
        solve_tridiagonal(&sub, &diag, &sup, &rhs, d).is_ok() && d.iter().all(|v| v.is_finite())
    }
}

/// Exact displacement step at fixed `β`: `α'` proportional to `1/f²(β̄)`
/// with total rise `t`. Returns `false` if every cell is rigid.
pub(crate) fn alpha_step(ell: f64, t: f64, beta: &[f64], floor: f64, alpha: &mut [f64]) -> bool {
    let n = beta.len() - 1;
    let mut compl = vec![0.0; n];
    let mut sum = 0.0;
    for c in 0..n {
        let b = 0.5 * (beta[c] + beta[c + 1]);
        let ci = if b >= 1.0 {
            0.0
        } else {
            let bf = b.max(floor);
            let r = (1.0 - bf) / (ell * bf);
            r * r
        };
        compl[c] = ci;
        sum += ci;
    }
    if !(sum > 0.0) || !sum.is_finite() {
        return t == 0.0;
    }
    alpha[0] = 0.0;
    for c in 0..n {
        alpha[c + 1] = alpha[c] + t * compl[c] / sum;
    }
    alpha[n] = t;
    true
}

/// Deterministic start: `α` an affine ramp over the middle fifth, `β` a tent
/// of depth `1 − β₀` over the same interval, `β₀ = (1 − √min(1, ℓt))₊`.
pub(crate) fn initial_profile(t: f64, ell: f64, t_len: f64, cells: usize) -> (Vec<f64>, Vec<f64>) {
    let h = t_len / cells as f64;
    let half_width = t_len / 10.0;
    let beta0 = (1.0 - (ell * t).min(1.0).sqrt()).max(0.0);
    let mut alpha = vec![0.0; cells + 1];
    let mut beta = vec![1.0; cells + 1];
    for i in 0..=cells {
        // symmetric node coordinate
        let x = h * (2.0 * i as f64 - cells as f64) * 0.5;
        let s = ((x + half_width) / (2.0 * half_width)).clamp(0.0, 1.0);
        alpha[i] = t * s;
        let tent = (1.0 - x.abs() / half_width).max(0.0);
        beta[i] = 1.0 - (1.0 - beta0) * tent;
    }
    alpha[0] = 0.0;
    alpha[cells] = t;
    beta[0] = 1.0;
    beta[cells] = 1.0;
    (alpha, beta)
}

pub fn gscal_cell(t: f64, ell: f64, t_len: f64, cells: usize) -> Result<CellProfile, SurfaceError> {
    gscal_cell_with(t, ell, t_len, cells, &CellOptions::default())
}

/// Solves the cell problem by alternating the exact `α` step with a projected
/// Newton `β` step, from the deterministic initial profile.
pub fn gscal_cell_with(
    t: f64,
    ell: f64,
    t_len: f64,
    cells: usize,
    opts: &CellOptions,
) -> Result<CellProfile, SurfaceError> {
    validate(t, ell, t_len, cells)?;
    let (alpha, beta) = initial_profile(t, ell, t_len, cells);
    solve_from(t, ell, t_len, alpha, beta, opts)
}

fn validate(t: f64, ell: f64, t_len: f64, cells: usize) -> Result<(), SurfaceError> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(SurfaceError::InvalidInput(format!(
            "amplitude must be nonnegative, got {t}"
        )));
    }
    if !(ell > 0.0) {
        return Err(SurfaceError::InvalidInput(format!("ell must be positive, got {ell}")));
    }
    if !(t_len >= 4.0) {
        return Err(SurfaceError::InvalidInput(format!("T must be at least 4, got {t_len}")));
    }
    if cells < 64 {
        return Err(SurfaceError::InvalidInput(format!(
            "need at least 64 cells, got {cells}"
        )));
    }
    Ok(())
}

/// Alternating minimization from a given admissible pair.
pub(crate) fn solve_from(
    t: f64,
    ell: f64,
    t_len: f64,
    mut alpha: Vec<f64>,
    mut beta: Vec<f64>,
    opts: &CellOptions,
) -> Result<CellProfile, SurfaceError> {
    let cells = alpha.len() - 1;
    validate(t, ell, t_len, cells)?;
    let h = t_len / cells as f64;
    if t == 0.0 {
        return Ok(CellProfile {
            t,
            ell,
            t_len,
            cells,
            alpha: vec![0.0; cells + 1],
            beta: vec![1.0; cells + 1],
            energy: 0.0,
            rounds: 0,
            converged: true,
            stagnated: false,
            trace: vec![0.0],
        });
    }
    let mut lo = vec![0.0; cells + 1];
    let hi = vec![1.0; cells + 1];
    lo[0] = 1.0;
    lo[cells] = 1.0;
    let mut energy = cell_energy(ell, h, &alpha, &beta);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut stagnated = false;
    let mut rounds = 0;
    let mut trial = alpha.clone();
    let mut strain = vec![0.0; cells];
    let pn = ProjectedNewtonOptions {
        max_iter: 100,
        tol_grad: 1e-13,
        tol_decrease: 1e-16,
        max_halvings: 40,
    };
    for round in 0..opts.max_rounds {
        rounds = round + 1;
        let start = energy;
        if alpha_step(ell, t, &beta, opts.beta_floor, &mut trial) {
            let e = cell_energy(ell, h, &trial, &beta);
            if e <= energy {
                alpha.copy_from_slice(&trial);
                energy = e;
            }
        } else {
            stagnated = true;
        }
        for c in 0..cells {
            let s = (alpha[c + 1] - alpha[c]) / h;
            strain[c] = s * s;
        }
        let problem = BetaProblem { ell, h, a: &strain };
        let rep = projected_newton(&problem, &mut beta, &lo, &hi, pn);
        energy = energy.min(rep.value);
        trace.push(energy);
        if !(start - energy >= 0.0) {
            stagnated = true;
            break;
        }
        if start - energy < opts.tol_energy {
            converged = true;
            break;
        }
    }
    if !converged {
        stagnated = true;
    }
    let energy = cell_energy(ell, h, &alpha, &beta);
    Ok(CellProfile {
        t,
        ell,
        t_len,
        cells,
        alpha,
        beta,
        energy,
        rounds,
        converged,
        stagnated,
        trace,
    })
}
