//! Small numerical kernels shared by the solvers: golden-section search,
//! Nelder–Mead, the Thomas algorithm, preconditioned conjugate gradients and
//! a projected Newton method for box constraints.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    CgNotConverged { iterations: usize, residual: f64 },
    #[error("singular tridiagonal system at row {0}")]
    SingularTridiagonal(usize),
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Minimizes a unimodal `f` on `[a, b]`; returns `(x, f(x))`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let (fa, fb) = (f(a), f(b));
    let mut best = (c, fc);
    for cand in [(d, fd), (a, fa), (b, fb)] {
        if cand.1 < best.1 {
            best = cand;
        }
    }
    best
}

/// Scans `n` equispaced points of `[a, b]`, then refines the best bracket by
/// golden section. Robust for functions with a few local minima.
pub fn scan_then_golden<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, n: usize, tol: f64) -> (f64, f64) {
    let n = n.max(3);
    let h = (b - a) / (n - 1) as f64;
    let mut best = (a, f(a));
    let mut best_i = 0;
    for i in 1..n {
        let x = if i == n - 1 { b } else { a + h * i as f64 };
        let fx = f(x);
        if fx < best.1 {
            best = (x, fx);
            best_i = i;
        }
    }
    let lo = a + h * best_i.saturating_sub(1) as f64;
    let hi = (a + h * (best_i + 1) as f64).min(b);
    let refined = golden_section(&mut f, lo, hi, tol);
    if refined.1 < best.1 {
        refined
    } else {
        best
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Derivative-free simplex minimization with the standard coefficients.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: &[f64],
    max_evals: usize,
    ftol: f64,
) -> NelderMeadResult {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step[i];
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
    let mut evals = n + 1;
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];

    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        if (values[n] - values[0]).abs() <= ftol * (1.0 + values[0].abs()) {
            break;
        }
        centroid.iter_mut().for_each(|c| *c = 0.0);
        for p in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(p) {
                *c += x / n as f64;
            }
        }
        let worst = simplex[n].clone();
        for k in 0..n {
            trial[k] = centroid[k] + (centroid[k] - worst[k]);
        }
        let fr = f(&trial);
        evals += 1;
        if fr < values[0] {
            for k in 0..n {
                trial2[k] = centroid[k] + 2.0 * (centroid[k] - worst[k]);
            }
            let fe = f(&trial2);
            evals += 1;
            if fe < fr {
                simplex[n].copy_from_slice(&trial2);
                values[n] = fe;
            } else {
                simplex[n].copy_from_slice(&trial);
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n].copy_from_slice(&trial);
            values[n] = fr;
        } else {
            let outside = fr < values[n];
            for k in 0..n {
                trial2[k] = if outside {
                    centroid[k] + 0.5 * (trial[k] - centroid[k])
                } else {
                    centroid[k] + 0.5 * (worst[k] - centroid[k])
                };
            }
            let fc = f(&trial2);
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n].copy_from_slice(&trial2);
                values[n] = fc;
            } else {
                // shrink toward the best vertex
                let best = simplex[0].clone();
                for i in 1..=n {
                    for k in 0..n {
                        simplex[i][k] = best[k] + 0.5 * (simplex[i][k] - best[k]);
                    }
                    values[i] = f(&simplex[i]);
                    evals += 1;
                }
            }
        }
    }
    let (ibest, _) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty simplex");
    NelderMeadResult {
        x: simplex[ibest].clone(),
        value: values[ibest],
        evaluations: evals,
    }
}

/// Solves the tridiagonal system with sub-diagonal `a` (a[0] unused),
/// diagonal `b` and super-diagonal `c` (c[n-1] unused).
pub fn solve_tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &[f64], x: &mut [f64]) -> Result<(), OptimError> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    if b[0] == 0.0 {
        return Err(OptimError::SingularTridiagonal(0));
    }
    cp[0] = if n > 1 { c[0] / b[0] } else { 0.0 };
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let denom = b[i] - a[i] * cp[i - 1];
        if denom == 0.0 || !denom.is_finite() {
            return Err(OptimError::SingularTridiagonal(i));
        }
        cp[i] = if i + 1 < n { c[i] / denom } else { 0.0 };
        dp[i] = (d[i] - a[i] * dp[i - 1]) / denom;
    }
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    pub residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive definite
/// operator. Stops when `|r| ≤ rtol·|b|`.
pub fn conjugate_gradient<A: FnMut(&[f64], &mut [f64])>(
    mut apply: A,
    diag: &[f64],
    rhs: &[f64],
    x: &mut [f64],
    rtol: f64,
    max_iter: usize,
) -> Result<CgReport, OptimError> {
    let n = rhs.len();
    let bnorm = norm(rhs);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgReport {
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    apply(x, &mut ap);
    for i in 0..n {
        r[i] = rhs[i] - ap[i];
    }
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = norm(&r) / bnorm;
    for it in 0..max_iter {
        if res <= rtol {
            return Ok(CgReport {
                iterations: it,
                residual: res,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(OptimError::CgNotConverged {
                iterations: it,
                residual: res,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm(&r) / bnorm;
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if res <= rtol {
        Ok(CgReport {
            iterations: max_iter,
            residual: res,
        })
    } else {
        Err(OptimError::CgNotConverged {
            iterations: max_iter,
            residual: res,
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A smooth objective on a box, as seen by [`projected_newton`].
pub trait BoxProblem {
    /// Objective value; `+∞` marks an inadmissible point.
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], g: &mut [f64]);
    /// Solves `H_FF d_F = g_F` on the free set, leaving `d = 0` elsewhere.
    /// Returns `false` if no descent direction could be formed.
    fn newton_direction(&self, x: &[f64], g: &[f64], free: &[bool], d: &mut [f64]) -> bool;
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectedNewtonOptions {
    pub max_iter: usize,
    /// Stop when the projected gradient falls below this (max norm).
    pub tol_grad: f64,
    /// Stop when one iteration decreases the objective by less than this.
    pub tol_decrease: f64,
    pub max_halvings: usize,
}

impl Default for ProjectedNewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol_grad: 1e-10,
            tol_decrease: 1e-14,
            max_halvings: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedNewtonReport {
    pub iterations: usize,
    pub value: f64,
    pub converged: bool,
    /// Armijo backtracking exhausted its halvings on the last iteration.
    pub line_search_failed: bool,
}

/// Bertsekas-style projected Newton on `lo ≤ x ≤ hi`. Entries with
/// `lo[i] == hi[i]` stay fixed. The objective never increases.
pub fn projected_newton<P: BoxProblem>(
    problem: &P,
    x: &mut [f64],
    lo: &[f64],
    hi: &[f64],
    opts: ProjectedNewtonOptions,
) -> ProjectedNewtonReport {
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut free = vec![true; n];
    let mut trial = vec![0.0; n];
    let mut value = problem.value(x);
    let mut report = ProjectedNewtonReport {
        iterations: 0,
        value,
        converged: false,
        line_search_failed: false,
    };
    for it in 0..opts.max_iter {
        report.iterations = it + 1;
        problem.gradient(x, &mut g);
        let mut pg: f64 = 0.0;
        for i in 0..n {
            let at_lo = x[i] <= lo[i] && g[i] > 0.0;
            let at_hi = x[i] >= hi[i] && g[i] < 0.0;
            free[i] = lo[i] < hi[i] && !at_lo && !at_hi;
            if free[i] {
                pg = pg.max(g[i].abs());
            }
        }
        if pg <= opts.tol_grad {
            report.converged = true;
            break;
        }
        let newton_ok = problem.newton_direction(x, &g, &free, &mut d);
        if !newton_ok || dot(&d, &g) <= 0.0 {
            // fall back to the scaled projected gradient
            for i in 0..n {
                d[i] = if free[i] { g[i] } else { 0.0 };
            }
        }
        let mut step = 1.0;
        let mut accepted = false;
        let mut tried_gradient = !newton_ok;
        loop {
            let mut halvings = 0;
            while halvings <= opts.max_halvings {
                let mut decrease_model = 0.0;
                for i in 0..n {
                    trial[i] = if lo[i] < hi[i] {
                        (x[i] - step * d[i]).clamp(lo[i], hi[i])
                    } else {
                        x[i]
                    };
                    decrease_model += g[i] * (x[i] - trial[i]);
                }
                let fv = problem.value(&trial);
                if fv.is_finite() && fv <= value - 1e-4 * decrease_model && fv <= value {
                    accepted = true;
                    break;
                }
                step *= 0.5;
                halvings += 1;
            }
            if accepted || tried_gradient {
                break;
            }
            // the Newton direction failed: retry once along the gradient
            tried_gradient = true;
            let gmax = g
                .iter()
                .zip(&free)
                .filter(|(_, f)| **f)
                .fold(0.0f64, |m, (v, _)| m.max(v.abs()));
            for i in 0..n {
                d[i] = if free[i] { g[i] / gmax.max(1e-300) } else { 0.0 };
            }
            step = 1.0;
        }
        if !accepted {
            report.line_search_failed = true;
            break;
        }
        let new_value = problem.value(&trial);
        x.copy_from_slice(&trial);
        let dec = value - new_value;
        value = new_value;
        report.value = value;
        if dec <= opts.tol_decrease * (1.0 + value.abs()) {
            report.converged = true;
            break;
        }
    }
    report.value = value;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_minimum() {
        let (x, fx) = golden_section(|x| (x - 0.3) * (x - 0.3) + 1.0, -1.0, 2.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-7);
        assert!((fx - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let r = nelder_mead(
            |p| (1.0 - p[0]).powi(2) + 100.0 * (p[1] - p[0] * p[0]).powi(2),
            &[-1.2, 1.0],
            &[0.5, 0.5],
            5000,
            1e-16,
        );
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn thomas_matches_dense() {
        let a = [0.0, -1.0, -1.0, -1.0];
        let b = [2.0, 2.0, 2.0, 2.0];
        let c = [-1.0, -1.0, -1.0, 0.0];
        let d = [1.0, 0.0, 0.0, 1.0];
        let mut x = [0.0; 4];
        solve_tridiagonal(&a, &b, &c, &d, &mut x).unwrap();
        for xi in x {
            assert!((xi - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn cg_solves_laplacian() {
        let n = 50;
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                let l = if i > 0 { x[i - 1] } else { 0.0 };
                let r = if i + 1 < n { x[i + 1] } else { 0.0 };
                y[i] = 2.0 * x[i] - l - r;
            }
        };
        let rhs = vec![1.0; n];
        let mut x = vec![0.0; n];
        let rep = conjugate_gradient(apply, &vec![2.0; n], &rhs, &mut x, 1e-12, 500).unwrap();
        assert!(rep.residual <= 1e-12);
        // exact solution x_i = (i+1)(n-i)/2
        for (i, xi) in x.iter().enumerate() {
            let exact = (i + 1) as f64 * (n - i) as f64 / 2.0;
            assert!((xi - exact).abs() < 1e-8 * exact);
        }
    }

    struct Quad {
        target: Vec<f64>,
    }

    impl BoxProblem for Quad {
        fn value(&self, x: &[f64]) -> f64 {
            x.iter().zip(&self.target).map(|(a, b)| (a - b) * (a - b)).sum()
        }
        fn gradient(&self, x: &[f64], g: &mut [f64]) {
            for i in 0..x.len() {
                g[i] = 2.0 * (x[i] - self.target[i]);
            }
        }
        fn newton_direction(&self, _x: &[f64], g: &[f64], free: &[bool], d: &mut [f64]) -> bool {
            for i in 0..g.len() {
                d[i] = if free[i] { g[i] / 2.0 } else { 0.0 };
            }
            true
        }
    }

    #[test]
    fn projected_newton_clips_to_box() {
        let p = Quad {
            target: vec![-1.0, 0.5, 2.0],
        };
        let mut x = vec![0.5; 3];
        let rep = projected_newton(&p, &mut x, &[0.0; 3], &[1.0; 3], ProjectedNewtonOptions::default());
        assert!(rep.converged);
        assert_eq!(x, vec![0.0, 0.5, 1.0]);
    }
}
