use serde::{Deserialize, Serialize};

use super::cell::{f2, initial_profile, BetaProblem, CellOptions};
use super::{SurfaceDensityCurve, SurfaceError};
use crate::material_laws::MaterialLaw;
use crate::optim::{projected_newton, solve_tridiagonal, ProjectedNewtonOptions};

/// Optimal pair of the vector-valued one-dimensional cell problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicedProfile {
    pub z: Vec<f64>,
    pub nu: Vec<f64>,
    #[serde(rename = "T")]
    pub t_len: f64,
    pub cells: usize,
    /// Node-major displacement values, `m` per node.
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub energy: f64,
    pub rounds: usize,
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `g(z, ν)`. For `Ψ∞ = |·|²` this is the scalar curve at `|z|`; sliceable
/// laws solve the vector-valued cell problem at the curve's `T`.
pub fn g_vectorial(z: &[f64], nu: &[f64], law: &MaterialLaw, curve: &SurfaceDensityCurve) -> Result<f64, SurfaceError> {
    check_inputs(z, nu, law)?;
    if (law.ell() - curve.ell).abs() > 1e-12 * law.ell() {
        return Err(SurfaceError::InvalidInput(format!(
            "curve computed for ell = {}, law has ell = {}",
            curve.ell,
            law.ell()
        )));
    }
    if law.has_euclidean_recession() {
        return curve.g_at(norm(z));
    }
    if !law.is_sliceable() {
        return Err(SurfaceError::Unsupported(law.kind().name().to_string()));
    }
    let cells = (curve.t_used * curve.cells_per_unit as f64).round() as usize;
    Ok(sliced_cell(z, nu, law, curve.t_used, cells, &CellOptions::default())?.energy)
}

fn check_inputs(z: &[f64], nu: &[f64], law: &MaterialLaw) -> Result<(), SurfaceError> {
    if z.len() != law.m() || nu.len() != law.n() {
        return Err(SurfaceError::InvalidInput(format!(
            "z has {} and nu {} components for a law on {}x{} matrices",
            z.len(),
            nu.len(),
            law.m(),
            law.n()
        )));
    }
    if (norm(nu) - 1.0).abs() > 1e-9 {
        return Err(SurfaceError::InvalidInput(format!("|nu| = {} is not 1", norm(nu))));
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(SurfaceError::InvalidInput("non-finite jump".into()));
    }
    Ok(())
}

/// Strain densities `Ψ∞(α'_c ⊗ ν)` per cell.
fn strains(
    law: &MaterialLaw,
    alpha: &[f64],
    nu: &[f64],
    m: usize,
    h: f64,
    out: &mut [f64],
) -> Result<(), SurfaceError> {
    let n = nu.len();
    let mut xi = vec![0.0; m * n];
    for c in 0..out.len() {
        for i in 0..m {
            let d = (alpha[(c + 1) * m + i] - alpha[c * m + i]) / h;
            for j in 0..n {
                xi[i * n + j] = d * nu[j];
            }
        }
        out[c] = if xi.iter().all(|&x| x == 0.0) {
            0.0
        } else {
            law.psi_infty_raw(&xi)?
        };
    }
    Ok(())
}

fn sliced_energy(
    law: &MaterialLaw,
    alpha: &[f64],
    beta: &[f64],
    nu: &[f64],
    m: usize,
    h: f64,
    scratch: &mut [f64],
) -> Result<f64, SurfaceError> {
    strains(law, alpha, nu, m, h, scratch)?;
    Ok(super::cell::beta_energy(law.ell(), h, scratch, beta))
}

/// Weighted Laplace solve per component: minimizes `Σ w_c |α_{c+1} − α_c|²`
/// with `α_0 = 0`, `α_N = z`.
fn weighted_laplace(weights: &[f64], z: &[f64], alpha: &mut [f64]) -> bool {
    let nc = weights.len();
    let m = z.len();
    let ni = nc - 1;
    let mut sub = vec![0.0; ni];
    let mut diag = vec![0.0; ni];
    let mut sup = vec![0.0; ni];
    for k in 0..ni {
        // interior node k+1 sits between cells k and k+1
        diag[k] = weights[k] + weights[k + 1];
        if k > 0 {
            sub[k] = -weights[k];
        }
        if k + 1 < ni {
            sup[k] = -weights[k + 1];
        }
    }
    let mut rhs = vec![0.0; ni];
    let mut x = vec![0.0; ni];
    for i in 0..m {
        rhs.iter_mut().for_each(|r| *r = 0.0);
        rhs[ni - 1] = weights[nc - 1] * z[i];
        if solve_tridiagonal(&sub, &diag, &sup, &rhs, &mut x).is_err() {
            return false;
        }
        alpha[i] = 0.0;
        for k in 0..ni {
            alpha[(k + 1) * m + i] = x[k];
        }
        alpha[nc * m + i] = z[i];
    }
    true
}

/// Solves the vector-valued cell problem
/// `min ∫ f²(β)Ψ∞(α'⊗ν) + (1−β)²/4 + |β'|²`, `α(−T/2) = 0`, `α(T/2) = z`.
///
/// The displacement step is a per-component weighted Laplace solve, which is
/// exact when `Ψ∞ = |·|²` and otherwise serves as the preconditioner of a
/// descent step on the displacement energy.
pub fn sliced_cell(
    z: &[f64],
    nu: &[f64],
    law: &MaterialLaw,
    t_len: f64,
    cells: usize,
    opts: &CellOptions,
) -> Result<SlicedProfile, SurfaceError> {
    check_inputs(z, nu, law)?;
    if !law.is_sliceable() {
        return Err(SurfaceError::Unsupported(law.kind().name().to_string()));
    }
    if t_len < 4.0 || cells < 64 {
        return Err(SurfaceError::InvalidInput(format!(
            "need T >= 4 and 64 cells, got {t_len}, {cells}"
        )));
    }
    let m = z.len();
    let ell = law.ell();
    let h = t_len / cells as f64;
    let zn = norm(z);
    let (ramp, mut beta) = initial_profile(zn, ell, t_len, cells);
    let mut alpha = vec![0.0; (cells + 1) * m];
    for (k, r) in ramp.iter().enumerate() {
        for i in 0..m {
            alpha[k * m + i] = if zn > 0.0 { r / zn * z[i] } else { 0.0 };
        }
    }
    let mut scratch = vec![0.0; cells];
    if zn == 0.0 {
        return Ok(SlicedProfile {
            z: z.to_vec(),
            nu: nu.to_vec(),
            t_len,
            cells,
            alpha,
            beta: vec![1.0; cells + 1],
            energy: 0.0,
            rounds: 0,
            converged: true,
        });
    }
    let quadratic = law.has_euclidean_recession();
    let mut lo = vec![0.0; cells + 1];
    let hi = vec![1.0; cells + 1];
    lo[0] = 1.0;
    lo[cells] = 1.0;
    let mut energy = sliced_energy(law, &alpha, &beta, nu, m, h, &mut scratch)?;
    let mut weights = vec![0.0; cells];
    let mut trial = alpha.clone();
    let mut converged = false;
    let mut rounds = 0;
    let pn = ProjectedNewtonOptions {
        max_iter: 100,
        tol_grad: 1e-13,
        tol_decrease: 1e-16,
        max_halvings: 40,
    };
    for round in 0..opts.max_rounds {
        rounds = round + 1;
        let start = energy;
        for c in 0..cells {
            let b = (0.5 * (beta[c] + beta[c + 1])).clamp(opts.beta_floor, 1.0 - 1e-6);
            weights[c] = f2(b, ell);
        }
        if weighted_laplace(&weights, z, &mut trial) {
            if quadratic {
                let e = sliced_energy(law, &trial, &beta, nu, m, h, &mut scratch)?;
                if e <= energy {
                    alpha.copy_from_slice(&trial);
                    energy = e;
                }
            } else {
                // backtrack along the preconditioned direction
                let mut step = 1.0;
                for _ in 0..40 {
                    let cand: Vec<f64> = alpha.iter().zip(&trial).map(|(a, t)| a + step * (t - a)).collect();
                    let e = sliced_energy(law, &cand, &beta, nu, m, h, &mut scratch)?;
                    if e <= energy {
                        alpha = cand;
                        energy = e;
                        break;
                    }
                    step *= 0.5;
                }
            }
        }
        strains(law, &alpha, nu, m, h, &mut scratch)?;
        let problem = BetaProblem { ell, h, a: &scratch };
        let rep = projected_newton(&problem, &mut beta, &lo, &hi, pn);
        energy = energy.min(rep.value);
        if start - energy < opts.tol_energy {
            converged = true;
            break;
        }
    }
    let energy = sliced_energy(law, &alpha, &beta, nu, m, h, &mut scratch)?;
    Ok(SlicedProfile {
        z: z.to_vec(),
        nu: nu.to_vec(),
        t_len,
        cells,
        alpha,
        beta,
        energy,
        rounds,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface_density::gscal_cell;

    #[test]
    fn sliced_matches_scalar_for_euclidean() {
        let law = MaterialLaw::euclidean(1.0, 2, 2).unwrap();
        let s = sliced_cell(&[0.3, 0.4], &[0.6, 0.8], &law, 8.0, 256, &CellOptions::default()).unwrap();
        let p = gscal_cell(0.5, 1.0, 8.0, 256).unwrap();
        assert!(
            (s.energy - p.energy).abs() < 1e-3 * p.energy,
            "{} vs {}",
            s.energy,
            p.energy
        );
    }

    #[test]
    fn unsupported_law_is_rejected() {
        use crate::material_laws::CustomPsi;
        use std::sync::Arc;
        let psi = CustomPsi {
            name: "aniso".into(),
            eval: Arc::new(|e: &[f64]| e[0] * e[0] + 2.0 * e[1] * e[1]),
            euclidean_recession: false,
            sliceable: false,
        };
        let law = MaterialLaw::custom(1.0, psi, 1, 2, 3.0).unwrap();
        assert!(matches!(
            sliced_cell(&[0.5], &[1.0, 0.0], &law, 8.0, 128, &CellOptions::default()),
            Err(SurfaceError::Unsupported(_))
        ));
    }
}
