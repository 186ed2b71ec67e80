use super::grid::Mesh;
use super::{EnergyParts, GridSpec, PhaseFieldError, PhaseFieldState, SolveConfig};
use crate::material_laws::{f_eps_sq_parts, MaterialLaw};

/// Everything the solvers need at one `ε`, resolved against a grid.
pub(crate) struct Discrete<'a> {
    pub law: &'a MaterialLaw,
    pub mesh: Mesh,
    pub m: usize,
    pub eps: f64,
    pub eta: f64,
    pub ell: f64,
    pub w: Option<Vec<f64>>,
    pub q: f64,
    /// Prescribed value per displacement degree of freedom.
    pub u_fixed: Vec<Option<f64>>,
    pub v_fixed: Vec<Option<f64>>,
}

impl<'a> Discrete<'a> {
    pub fn new(law: &'a MaterialLaw, grid: &GridSpec, cfg: &SolveConfig, eps: f64) -> Result<Self, PhaseFieldError> {
        let mesh = Mesh::new(grid)?;
        if law.n() != grid.dim() {
            return Err(PhaseFieldError::InvalidConfig(format!(
                "law acts on {}x{} matrices but the grid is {}D",
                law.m(),
                law.n(),
                grid.dim()
            )));
        }
        if law.m() * grid.dim() > 6 {
            return Err(PhaseFieldError::InvalidConfig(format!(
                "m = {} is too large for the phase-field solver",
                law.m()
            )));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(PhaseFieldError::InvalidConfig(format!(
                "eps must be positive, got {eps}"
            )));
        }
        cfg.eta_rule.validate(&[eps])?;
        if !(cfg.fidelity_q > 1.0) {
            return Err(PhaseFieldError::InvalidConfig(format!(
                "fidelity exponent must exceed 1, got {}",
                cfg.fidelity_q
            )));
        }
        let m = law.m();
        let n = grid.node_count();
        let w = match &cfg.fidelity_w {
            Some(f) => Some(f.nodal(grid, m)?),
            None => None,
        };
        let mut u_fixed = vec![None; n * m];
        for bc in &cfg.u_bc {
            for k in grid.face_nodes(bc.face)? {
                let val = bc.value.at_node(grid, k, m)?;
                for i in 0..m {
                    u_fixed[k * m + i] = Some(val[i]);
                }
            }
        }
        let mut v_fixed = vec![None; n];
        for bc in &cfg.v_bc {
            if !(0.0..=1.0).contains(&bc.value) {
                return Err(PhaseFieldError::InvalidConfig(format!(
                    "damage boundary value {} outside [0, 1]",
                    bc.value
                )));
            }
            for k in grid.face_nodes(bc.face)? {
                v_fixed[k] = Some(bc.value);
            }
        }
        Ok(Self {
            law,
            mesh,
            m,
            eps,
            eta: cfg.eta_rule.eta(eps),
            ell: law.ell(),
            w,
            q: cfg.fidelity_q,
            u_fixed,
            v_fixed,
        })
    }

    pub fn check_shapes(&self, u: &[f64], v: &[f64]) -> Result<(), PhaseFieldError> {
        let n = self.mesh.node_count;
        if u.len() != n * self.m || v.len() != n {
            return Err(PhaseFieldError::InvalidState(format!(
                "u has {} and v {} entries for {} nodes with m = {}",
                u.len(),
                v.len(),
                n,
                self.m
            )));
        }
        if let Some(bad) = v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(PhaseFieldError::InvalidState(format!(
                "damage value {bad} outside [0, 1]"
            )));
        }
        Ok(())
    }

    /// Whether the Dirichlet data hold to within `tol`.
    pub fn satisfies_bc(&self, u: &[f64], v: &[f64], tol: f64) -> bool {
        let ok_u = self
            .u_fixed
            .iter()
            .zip(u)
            .all(|(f, x)| f.is_none_or(|y| (x - y).abs() <= tol));
        let ok_v = self
            .v_fixed
            .iter()
            .zip(v)
            .all(|(f, x)| f.is_none_or(|y| (x - y).abs() <= tol));
        ok_u && ok_v
    }

    pub fn impose_bc(&self, u: &mut [f64], v: &mut [f64]) {
        for (x, f) in u.iter_mut().zip(&self.u_fixed) {
            if let Some(y) = f {
                *x = *y;
            }
        }
        for (x, f) in v.iter_mut().zip(&self.v_fixed) {
            if let Some(y) = f {
                *x = *y;
            }
        }
    }

    /// `Ψ(∇u)` per element.
    pub fn element_psi(&self, u: &[f64]) -> Vec<f64> {
        let mut xi = [0.0; 6];
        let d = self.mesh.dim;
        self.mesh
            .elements
            .iter()
            .map(|e| {
                self.mesh.grad_u(e, u, self.m, &mut xi);
                self.law.psi_raw(&xi[..self.m * d])
            })
            .collect()
    }

    pub fn fidelity(&self, u: &[f64]) -> f64 {
        let Some(w) = &self.w else { return 0.0 };
        let m = self.m;
        let mut s = 0.0;
        for (k, lw) in self.mesh.lumped.iter().enumerate() {
            let r2: f64 = (0..m).map(|i| (u[k * m + i] - w[k * m + i]).powi(2)).sum();
            s += lw * r2.powf(0.5 * self.q);
        }
        s
    }

    /// Energy terms that depend on `v`, at given element strain energies.
    pub fn damage_parts(&self, psi: &[f64], v: &[f64]) -> (f64, f64, f64) {
        let mut elastic = 0.0;
        let mut grad = 0.0;
        for (e, &p) in self.mesh.elements.iter().zip(psi) {
            let vb = self.mesh.mean_v(e, v);
            let (fe2, _, _) = f_eps_sq_parts(vb, self.eps, self.ell);
            elastic += e.vol * fe2 * p;
            grad += e.vol * self.eps * self.mesh.grad_v_sq(e, v);
        }
        let local: f64 = self
            .mesh
            .lumped
            .iter()
            .zip(v)
            .map(|(w, vi)| w * (1.0 - vi) * (1.0 - vi))
            .sum::<f64>()
            / (4.0 * self.eps);
        (elastic, local, grad)
    }

    pub fn parts(&self, u: &[f64], v: &[f64]) -> Result<EnergyParts, PhaseFieldError> {
        let psi = self.element_psi(u);
        let (elastic, damage_local, damage_gradient) = self.damage_parts(&psi, v);
        let regularization = self.eta * self.mesh.elements.iter().zip(&psi).map(|(e, p)| e.vol * p).sum::<f64>();
        let parts = EnergyParts {
            elastic,
            damage_local,
            damage_gradient,
            regularization,
            fidelity: self.fidelity(u),
        };
        for (name, val) in [
            ("elastic", parts.elastic),
            ("damage_local", parts.damage_local),
            ("damage_gradient", parts.damage_gradient),
            ("regularization", parts.regularization),
            ("fidelity", parts.fidelity),
        ] {
            if !val.is_finite() {
                return Err(PhaseFieldError::Assembly { part: name });
            }
        }
        Ok(parts)
    }

    /// Energy restricted to the `u`-dependent terms, at fixed `v`.
    pub fn u_energy(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut xi = [0.0; 6];
        let d = self.mesh.dim;
        let mut s = 0.0;
        for e in &self.mesh.elements {
            self.mesh.grad_u(e, u, self.m, &mut xi);
            let vb = self.mesh.mean_v(e, v);
            let (fe2, _, _) = f_eps_sq_parts(vb, self.eps, self.ell);
            s += e.vol * (fe2 + self.eta) * self.law.psi_raw(&xi[..self.m * d]);
        }
        s + self.fidelity(u)
    }

    /// Per-element stiffness weight `f_ε²(v̄) + η` times the element volume.
    pub fn u_weights(&self, v: &[f64]) -> Vec<f64> {
        self.mesh
            .elements
            .iter()
            .map(|e| {
                let (fe2, _, _) = f_eps_sq_parts(self.mesh.mean_v(e, v), self.eps, self.ell);
                e.vol * (fe2 + self.eta)
            })
            .collect()
    }

    pub fn grad_u(&self, u: &[f64], v: &[f64], g: &mut [f64]) {
        let m = self.m;
        let d = self.mesh.dim;
        let weights = self.u_weights(v);
        let mut xi = [0.0; 6];
        let mut dpsi = [0.0; 6];
        g.iter_mut().for_each(|x| *x = 0.0);
        for (e, &w) in self.mesh.elements.iter().zip(&weights) {
            self.mesh.grad_u(e, u, m, &mut xi);
            self.law.psi_grad_raw(&xi[..m * d], &mut dpsi[..m * d]);
            for a in 0..self.mesh.k {
                let node = e.nodes[a];
                for i in 0..m {
                    let mut s = 0.0;
                    for c in 0..d {
                        s += dpsi[i * d + c] * e.grad[a][c];
                    }
                    g[node * m + i] += w * s;
                }
            }
        }
        if let Some(wf) = &self.w {
            for (k, lw) in self.mesh.lumped.iter().enumerate() {
                let r2: f64 = (0..m).map(|i| (u[k * m + i] - wf[k * m + i]).powi(2)).sum();
                if r2 == 0.0 {
                    continue;
                }
                let s = lw * self.q * r2.powf(0.5 * self.q - 1.0);
                for i in 0..m {
                    g[k * m + i] += s * (u[k * m + i] - wf[k * m + i]);
                }
            }
        }
    }

    pub fn grad_v(&self, psi: &[f64], v: &[f64], g: &mut [f64]) {
        let k = self.mesh.k;
        for ((gi, lw), vi) in g.iter_mut().zip(&self.mesh.lumped).zip(v) {
            *gi = -lw * (1.0 - vi) / (2.0 * self.eps);
        }
        for (e, &p) in self.mesh.elements.iter().zip(psi) {
            let vb = self.mesh.mean_v(e, v);
            let (_, d1, _) = f_eps_sq_parts(vb, self.eps, self.ell);
            let el = e.vol * d1 * p / k as f64;
            for a in 0..k {
                let mut lap = 0.0;
                for b in 0..k {
                    lap += v[e.nodes[b]] * self.mesh.stiffness(e, a, b);
                }
                g[e.nodes[a]] += el + 2.0 * e.vol * self.eps * lap;
            }
        }
    }
}

/// Energy breakdown of a state.
pub fn assemble_energy(
    state: &PhaseFieldState,
    law: &MaterialLaw,
    grid: &GridSpec,
    cfg: &SolveConfig,
) -> Result<EnergyParts, PhaseFieldError> {
    let disc = Discrete::new(law, grid, cfg, state.eps)?;
    disc.check_shapes(&state.u, &state.v)?;
    disc.parts(&state.u, &state.v)
}

/// Gradients of the total energy with respect to `u` and `v`. The damage
/// gradient is one-sided where an element average sits exactly at `γ_ε`.
pub fn energy_gradient(
    state: &PhaseFieldState,
    law: &MaterialLaw,
    grid: &GridSpec,
    cfg: &SolveConfig,
) -> Result<(Vec<f64>, Vec<f64>), PhaseFieldError> {
    let disc = Discrete::new(law, grid, cfg, state.eps)?;
    disc.check_shapes(&state.u, &state.v)?;
    let mut gu = vec![0.0; state.u.len()];
    let mut gv = vec![0.0; state.v.len()];
    disc.grad_u(&state.u, &state.v, &mut gu);
    let psi = disc.element_psi(&state.u);
    disc.grad_v(&psi, &state.v, &mut gv);
    Ok((gu, gv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasefield::VectorField;

    #[test]
    fn zero_state_has_zero_energy() {
        let law = MaterialLaw::euclidean(1.0, 1, 1).unwrap();
        let g = GridSpec::bar(1.0, 21);
        let s = PhaseFieldState::undamaged(&g, 1, 0.01);
        let p = assemble_energy(&s, &law, &g, &SolveConfig::default()).unwrap();
        assert_eq!(p.total(), 0.0);
    }

    #[test]
    fn affine_bar_is_purely_elastic() {
        let law = MaterialLaw::euclidean(1.0, 1, 1).unwrap();
        let g = GridSpec::bar(2.0, 41);
        let mut s = PhaseFieldState::undamaged(&g, 1, 0.05);
        for k in 0..41 {
            s.u[k] = 0.3 * g.coords(k)[0];
        }
        let cfg = SolveConfig {
            eta_rule: crate::phasefield::EtaRule::Power {
                coef: 0.0,
                exponent: 2.0,
            },
            ..SolveConfig::default()
        };
        let p = assemble_energy(&s, &law, &g, &cfg).unwrap();
        assert!((p.elastic - 0.09 * 2.0).abs() < 1e-13);
        assert_eq!(p.damage_local + p.damage_gradient + p.regularization, 0.0);
    }

    #[test]
    fn fidelity_term_is_lumped() {
        let law = MaterialLaw::euclidean(1.0, 2, 2).unwrap();
        let g = GridSpec::rect(1.0, 2.0, 5, 9);
        let s = PhaseFieldState::undamaged(&g, 2, 0.1);
        let cfg = SolveConfig {
            fidelity_w: Some(VectorField::Constant { value: vec![0.5, 0.0] }),
            ..SolveConfig::default()
        };
        let p = assemble_energy(&s, &law, &g, &cfg).unwrap();
        assert!((p.fidelity - 0.25 * 2.0).abs() < 1e-13);
    }
}
