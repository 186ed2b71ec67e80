//! Iterated rank-one convexification.
//!
//! `R_0 = h` and `R_k(ξ) = min(R_{k-1}(ξ), inf_d conv[t ↦ R_{k-1}(ξ + t d)](0))`
//! over rank-one unit directions `d = a⊗b`. Every value produced is realized
//! by an explicit laminate (or the limit of laminates with one far leg, whose
//! cost per unit length is `ℓ√Ψ∞(d)`), so the result is an upper bound of the
//! rank-one convex envelope and therefore of `h^qc`.

use nalgebra::{DMatrix, Matrix2, Matrix3};
use rayon::prelude::*;
use smallvec::SmallVec;

use super::{AxisSpec, EnvelopeError, EnvelopeKind, EnvelopeTable, GridSpec};
use crate::material_laws::{h_scal_conv, MaterialLaw, MatrixArg, PsiKind};
use crate::optim::nelder_mead;

type Point = SmallVec<[f64; 9]>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaminationOptions {
    /// Sampled directions tried at inner levels, besides the singular-vector ones.
    pub inner_directions: usize,
    /// Geometric amplitudes per side of each one-dimensional section.
    pub section_samples: usize,
    /// Top-level directions kept after screening with `R_1`.
    pub screen_keep: usize,
    /// Points of the λ grid in the refinement of the best split.
    pub lambda_grid: usize,
    /// Function evaluations of the final Nelder–Mead pass (0 disables it).
    pub refine_evals: usize,
}

impl Default for LaminationOptions {
    fn default() -> Self {
        Self {
            inner_directions: 6,
            section_samples: 8,
            screen_keep: 4,
            lambda_grid: 33,
            refine_evals: 60,
        }
    }
}

/// `depth`-fold lamination upper bound of `h^qc(ξ)` with `split_budget`
/// sampled directions at the top level.
pub fn lamination_envelope(
    law: &MaterialLaw,
    xi: &MatrixArg,
    depth: usize,
    split_budget: usize,
) -> Result<f64, EnvelopeError> {
    lamination_envelope_with(law, xi, depth, split_budget, &LaminationOptions::default())
}

pub fn lamination_envelope_with(
    law: &MaterialLaw,
    xi: &MatrixArg,
    depth: usize,
    split_budget: usize,
    opts: &LaminationOptions,
) -> Result<f64, EnvelopeError> {
    if depth > 4 {
        return Err(EnvelopeError::DepthTooLarge(depth));
    }
    law.h_eval(xi)?;
    let lam = Laminator::new(law, opts)?;
    let e = xi.entries();
    let mut value = law.h_raw(e);
    for k in 1..=depth {
        // each depth is a candidate for the next one, so the sequence is monotone
        value = value.min(lam.top_level(k, e, split_budget));
    }
    Ok(value)
}

/// Tabulates [`lamination_envelope_with`] on a tensor grid of matrix entries.
pub fn lamination_table(
    law: &MaterialLaw,
    axes: &[AxisSpec],
    depth: usize,
    split_budget: usize,
    opts: &LaminationOptions,
) -> Result<EnvelopeTable, EnvelopeError> {
    if axes.len() != law.dim() {
        return Err(EnvelopeError::InvalidGrid(format!(
            "{} axes for a law on {}x{} matrices",
            axes.len(),
            law.m(),
            law.n()
        )));
    }
    let grid = GridSpec::axes(axes.to_vec());
    let (m, n) = (law.m(), law.n());
    let values = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let xi = MatrixArg::new(m, n, &grid.point(k))?;
            lamination_envelope_with(law, &xi, depth, split_budget, opts)
        })
        .collect::<Result<Vec<f64>, EnvelopeError>>()?;
    Ok(EnvelopeTable::new(grid, values, EnvelopeKind::LaminationDepthK, depth)?
        .with_param("psi", law.kind().name())
        .with_param("ell", law.ell())
        .with_param("split_budget", split_budget))
}

struct Laminator<'a> {
    law: &'a MaterialLaw,
    inner: Vec<Point>,
    opts: LaminationOptions,
}

/// Best split found along one direction: value and the two leg offsets
/// (`±∞` marks a far leg).
#[derive(Debug, Clone, Copy)]
struct Split {
    value: f64,
    t_neg: f64,
    t_pos: f64,
}

impl<'a> Laminator<'a> {
    fn new(law: &'a MaterialLaw, opts: &LaminationOptions) -> Result<Self, EnvelopeError> {
        let inner = rank_one_directions(law.m(), law.n(), opts.inner_directions);
        // recession must be available along every direction we use
        for d in &inner {
            law.psi_infty_raw(d)?;
        }
        Ok(Self {
            law,
            inner,
            opts: *opts,
        })
    }

    /// A known lower bound of `h^conv`, available for `Ψ = |·|²` where the
    /// convex envelope is radial. Values at the bound cannot be improved.
    fn convex_floor(&self, xi: &[f64]) -> Option<f64> {
        match self.law.kind() {
            PsiKind::EuclideanSquared => {
                let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
                Some(h_scal_conv(r, self.law.ell()) * (1.0 + 1e-12) + 1e-15)
            }
            _ => None,
        }
    }

    fn far_slope(&self, d: &[f64]) -> f64 {
        self.law.ell() * self.law.psi_infty_raw(d).unwrap_or(f64::INFINITY).max(0.0).sqrt()
    }

    /// `R_level(ξ)` with the inner direction set.
    fn value(&self, level: usize, xi: &[f64]) -> f64 {
        if level == 0 {
            return self.law.h_raw(xi);
        }
        let mut best = self.value(level - 1, xi);
        let floor = self.convex_floor(xi).unwrap_or(f64::NEG_INFINITY);
        if best <= floor {
            return best;
        }
        for d in aligned_directions(xi, self.law.m(), self.law.n())
            .iter()
            .chain(&self.inner)
        {
            let s = self.split(level - 1, xi, d);
            if s.value < best {
                best = s.value;
                if best <= floor {
                    break;
                }
            }
        }
        best
    }

    fn section_offsets(&self, xi: &[f64], d: &[f64]) -> SmallVec<[f64; 32]> {
        let ell = self.law.ell();
        let nrm = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = nrm.max(ell);
        let k = self.opts.section_samples.max(2);
        let (lo, hi) = (5e-2 * scale, 5.0 * scale);
        let ratio = (hi / lo).powf(1.0 / (k - 1) as f64);
        let mut ts: SmallVec<[f64; 32]> = SmallVec::new();
        let mut r = lo;
        for _ in 0..k {
            ts.push(r);
            ts.push(-r);
            r *= ratio;
        }
        // offsets where the section crosses the characteristic radii of h
        let b: f64 = xi.iter().zip(d).map(|(x, y)| x * y).sum();
        if b.abs() > 1e-14 {
            ts.push(-b);
        }
        for rad in [0.25 * ell, 0.5 * ell, ell, 2.0 * ell] {
            let disc = b * b - nrm * nrm + rad * rad;
            if disc >= 0.0 {
                let s = disc.sqrt();
                for t in [-b - s, -b + s] {
                    if t.abs() > 1e-12 {
                        ts.push(t);
                    }
                }
            }
        }
        ts
    }

    /// Convex envelope at `t = 0` of `t ↦ R_level(ξ + t d)` from sampled
    /// offsets plus far legs.
    fn split(&self, level: usize, xi: &[f64], d: &[f64]) -> Split {
        let ts = self.section_offsets(xi, d);
        let mut neg: SmallVec<[(f64, f64); 24]> = SmallVec::new();
        let mut pos: SmallVec<[(f64, f64); 24]> = SmallVec::new();
        let mut p: Point = SmallVec::from_slice(xi);
        for &t in &ts {
            for i in 0..xi.len() {
                p[i] = xi[i] + t * d[i];
            }
            let v = self.value(level, &p);
            if t < 0.0 {
                neg.push((t, v));
            } else {
                pos.push((t, v));
            }
        }
        best_combination(&neg, &pos, self.far_slope(d))
    }

    /// Value of the split `(t_neg, t_pos)` along the direction `a⊗b`, taking
    /// the better of the two-leg laminate and either leg paired with a far leg.
    fn split_value(&self, level: usize, xi: &[f64], d: &[f64], t_neg: f64, t_pos: f64) -> f64 {
        let mut p: Point = SmallVec::from_slice(xi);
        let mut eval = |t: f64| {
            for i in 0..xi.len() {
                p[i] = xi[i] + t * d[i];
            }
            self.value(level, &p)
        };
        let f_neg = eval(t_neg);
        let f_pos = eval(t_pos);
        best_combination(&[(t_neg, f_neg)], &[(t_pos, f_pos)], self.far_slope(d)).value
    }

    fn top_level(&self, depth: usize, xi: &[f64], budget: usize) -> f64 {
        let (m, n) = (self.law.m(), self.law.n());
        let base = self.value(depth - 1, xi);
        if base <= self.convex_floor(xi).unwrap_or(f64::NEG_INFINITY) {
            return base;
        }
        let mut candidates = rank_one_directions(m, n, budget.max(1));
        let screen_level = (depth - 1).min(1);
        let mut screened: Vec<(f64, usize)> = candidates
            .par_iter()
            .enumerate()
            .map(|(i, d)| (self.split(screen_level, xi, d).value, i))
            .collect();
        screened.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut full: Vec<Point> = screened
            .iter()
            .take(self.opts.screen_keep)
            .map(|&(_, i)| std::mem::take(&mut candidates[i]))
            .collect();
        full.extend(aligned_directions(xi, m, n));
        let results: Vec<(Split, usize)> = full
            .par_iter()
            .enumerate()
            .map(|(i, d)| (self.split(depth - 1, xi, d), i))
            .collect();
        let (best, bi) = results
            .iter()
            .copied()
            .min_by(|a, b| a.0.value.total_cmp(&b.0.value).then(a.1.cmp(&b.1)))
            .expect("at least one direction");
        if best.value >= base {
            return base;
        }
        let refined = self.refine(depth - 1, xi, &full[bi], best);
        base.min(best.value).min(refined)
    }

    /// λ-grid pass at fixed span, then Nelder–Mead on the direction and legs.
    fn refine(&self, level: usize, xi: &[f64], d: &[f64], start: Split) -> f64 {
        let mut best = start;
        let finite = |t: f64| t.is_finite();
        if finite(best.t_neg) && finite(best.t_pos) && self.opts.lambda_grid >= 3 {
            let span = best.t_pos - best.t_neg;
            let k = self.opts.lambda_grid;
            for j in 1..k - 1 {
                let lambda = j as f64 / (k - 1) as f64;
                let (tn, tp) = (-lambda * span, (1.0 - lambda) * span);
                let v = self.split_value(level, xi, d, tn, tp);
                if v < best.value {
                    best = Split {
                        value: v,
                        t_neg: tn,
                        t_pos: tp,
                    };
                }
            }
        }
        if self.opts.refine_evals == 0 {
            return best.value;
        }
        let (m, n) = (self.law.m(), self.law.n());
        let (a0, b0) = factor_rank_one(d, m, n);
        // a far leg is represented by a large offset during refinement
        let cap = 1e3 * xi.iter().map(|x| x * x).sum::<f64>().sqrt().max(self.law.ell());
        let tn = if best.t_neg.is_finite() { -best.t_neg } else { cap };
        let tp = if best.t_pos.is_finite() { best.t_pos } else { cap };
        let mut x0: Vec<f64> = a0.iter().chain(b0.iter()).copied().collect();
        x0.push(tn.max(1e-9).ln());
        x0.push(tp.max(1e-9).ln());
        let mut step = vec![0.2; m + n];
        step.push(0.3);
        step.push(0.3);
        let objective = |x: &[f64]| {
            let dir = normalized_outer(&x[..m], &x[m..m + n]);
            match dir {
                Some(dir) => {
                    let tn = x[m + n].clamp(-40.0, 40.0).exp();
                    let tp = x[m + n + 1].clamp(-40.0, 40.0).exp();
                    self.split_value(level, xi, &dir, -tn, tp)
                }
                None => f64::INFINITY,
            }
        };
        let res = nelder_mead(objective, &x0, &step, self.opts.refine_evals, 1e-12);
        best.value.min(res.value)
    }
}

/// Best convex combination at 0 from points on either side and far legs of
/// slope `far` in both directions.
fn best_combination(neg: &[(f64, f64)], pos: &[(f64, f64)], far: f64) -> Split {
    let mut best = Split {
        value: f64::INFINITY,
        t_neg: 0.0,
        t_pos: 0.0,
    };
    for &(tn, fnv) in neg {
        for &(tp, fpv) in pos {
            let v = (tp * fnv - tn * fpv) / (tp - tn);
            if v < best.value {
                best = Split {
                    value: v,
                    t_neg: tn,
                    t_pos: tp,
                };
            }
        }
        if far.is_finite() {
            let v = fnv + far * (-tn);
            if v < best.value {
                best = Split {
                    value: v,
                    t_neg: tn,
                    t_pos: f64::INFINITY,
                };
            }
        }
    }
    if far.is_finite() {
        for &(tp, fpv) in pos {
            let v = fpv + far * tp;
            if v < best.value {
                best = Split {
                    value: v,
                    t_neg: f64::NEG_INFINITY,
                    t_pos: tp,
                };
            }
        }
    }
    best
}

fn normalized_outer(a: &[f64], b: &[f64]) -> Option<Point> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return None;
    }
    let mut out = Point::new();
    for &ai in a {
        for &bj in b {
            out.push(ai * bj / (na * nb));
        }
    }
    Some(out)
}

/// Recovers `(a, b)` with `d = a⊗b` from a rank-one matrix.
fn factor_rank_one(d: &[f64], m: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let (mut bi, mut bj, mut bv) = (0, 0, 0.0);
    for i in 0..m {
        for j in 0..n {
            if d[i * n + j].abs() > bv {
                (bi, bj, bv) = (i, j, d[i * n + j].abs());
            }
        }
    }
    let pivot = d[bi * n + bj];
    let a: Vec<f64> = (0..m).map(|i| d[i * n + bj] / pivot).collect();
    let b: Vec<f64> = (0..n).map(|j| d[bi * n + j]).collect();
    (a, b)
}

/// Deterministic, roughly uniform samples of the unit sphere in `R^dim` up to
/// sign (half circle, Fibonacci hemisphere).
fn sphere_samples(dim: usize, count: usize) -> Vec<Vec<f64>> {
    let count = count.max(1);
    match dim {
        1 => vec![vec![1.0]],
        2 => (0..count)
            .map(|k| {
                let th = std::f64::consts::PI * (k as f64 + 0.5) / count as f64;
                vec![th.cos(), th.sin()]
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - (k as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let th = golden * k as f64;
                    vec![r * th.cos(), r * th.sin(), z]
                })
                .collect()
        }
        _ => {
            // Halton-style scatter on a hemisphere for higher dimensions
            let primes = [2u64, 3, 5, 7, 11, 13, 17, 19, 23];
            (0..count)
                .map(|k| {
                    let mut v: Vec<f64> = (0..dim)
                        .map(|j| 2.0 * radical_inverse(k as u64 + 1, primes[j % primes.len()]) - 1.0)
                        .collect();
                    let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                    let sign = if v[dim - 1] < 0.0 { -1.0 } else { 1.0 };
                    v.iter_mut().for_each(|x| *x *= sign / nrm);
                    v
                })
                .collect()
        }
    }
}

fn radical_inverse(mut k: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while k > 0 {
        out += (k % base) as f64 * inv;
        k /= base;
        inv /= base as f64;
    }
    out
}

/// About `count` rank-one unit directions `a⊗b`, distinct up to sign.
fn rank_one_directions(m: usize, n: usize, count: usize) -> Vec<Point> {
    let (na, nb) = if m == 1 {
        (1, count)
    } else if n == 1 {
        (count, 1)
    } else {
        let share = (m - 1) as f64 / (m + n - 2) as f64;
        let na = ((count as f64).powf(share).round() as usize).max(1);
        (na, count.div_ceil(na).max(1))
    };
    let a_set = sphere_samples(m, na);
    let b_set = sphere_samples(n, nb);
    let mut out = Vec::with_capacity(a_set.len() * b_set.len());
    for a in &a_set {
        for b in &b_set {
            out.push(normalized_outer(a, b).expect("unit factors"));
        }
    }
    out
}

/// Singular-vector directions `u_i⊗v_j` of `ξ`; coordinate directions when
/// `ξ = 0` or the matrices are vectors.
fn aligned_directions(xi: &[f64], m: usize, n: usize) -> SmallVec<[Point; 16]> {
    let mut out: SmallVec<[Point; 16]> = SmallVec::new();
    let degenerate = xi.iter().all(|&x| x == 0.0) || m == 1 || n == 1;
    if degenerate {
        for i in 0..m {
            for j in 0..n {
                let mut d = Point::from_elem(0.0, m * n);
                d[i * n + j] = 1.0;
                out.push(d);
            }
        }
        if m == 1 || n == 1 {
            let nrm = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nrm > 0.0 {
                out.push(xi.iter().map(|x| x / nrm).collect());
            }
        }
        return out;
    }
    macro_rules! push_pairs {
        ($mat:expr) => {{
            let svd = $mat.svd(true, true);
            let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
            for i in 0..u.ncols() {
                for j in 0..vt.nrows() {
                    let a: SmallVec<[f64; 3]> = u.column(i).iter().copied().collect();
                    let b: SmallVec<[f64; 3]> = vt.row(j).iter().copied().collect();
                    if let Some(d) = normalized_outer(&a, &b) {
                        out.push(d);
                    }
                }
            }
        }};
    }
    match (m, n) {
        (2, 2) => push_pairs!(Matrix2::from_row_slice(xi)),
        (3, 3) => push_pairs!(Matrix3::from_row_slice(xi)),
        _ => push_pairs!(DMatrix::from_row_slice(m, n, xi)),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material_laws::h_scal_conv;

    #[test]
    fn small_matrices_are_not_improved() {
        let law = MaterialLaw::euclidean(1.0, 2, 2).unwrap();
        let xi = MatrixArg::new(2, 2, &[0.2, 0.1, -0.15, 0.25]).unwrap();
        let v = lamination_envelope(&law, &xi, 2, 64).unwrap();
        assert_eq!(v, law.h_eval(&xi).unwrap());
    }

    #[test]
    fn rank_one_reaches_convex_envelope() {
        let law = MaterialLaw::euclidean(1.0, 2, 2).unwrap();
        let xi = MatrixArg::outer(&[0.6, 0.8], &[1.0, 0.0]).scaled(2.0);
        let v = lamination_envelope(&law, &xi, 1, 64).unwrap();
        assert!((v - 1.75).abs() < 0.02 * 1.75, "{v}");
        assert!(v >= h_scal_conv(2.0, 1.0) - 1e-9);
    }

    #[test]
    fn depth_is_monotone() {
        let law = MaterialLaw::euclidean(1.0, 2, 2).unwrap();
        let xi = MatrixArg::new(2, 2, &[1.1, 0.3, 0.2, -0.4]).unwrap();
        let mut prev = f64::INFINITY;
        for depth in 0..=2 {
            let v = lamination_envelope(&law, &xi, depth, 32).unwrap();
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn direction_sets_are_unit_rank_one() {
        for (m, n) in [(1, 2), (2, 2), (3, 3), (2, 3)] {
            for d in rank_one_directions(m, n, 40) {
                let nrm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((nrm - 1.0).abs() < 1e-12);
                let (a, b) = factor_rank_one(&d, m, n);
                for i in 0..m {
                    for j in 0..n {
                        assert!((a[i] * b[j] - d[i * n + j]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn table_matches_pointwise_values() {
        let law = MaterialLaw::euclidean(1.0, 1, 2).unwrap();
        let ax = AxisSpec::new(-1.5, 1.5, 4).unwrap();
        let opts = LaminationOptions::default();
        let t = lamination_table(&law, &[ax, ax], 1, 16, &opts).unwrap();
        assert_eq!(t.kind, EnvelopeKind::LaminationDepthK);
        for k in 0..t.values.len() {
            let p = t.grid.point(k);
            let direct = lamination_envelope_with(&law, &MatrixArg::new(1, 2, &p).unwrap(), 1, 16, &opts).unwrap();
            assert_eq!(t.values[k], direct);
            assert_eq!(t.query(&p).unwrap(), direct);
        }
    }

    #[test]
    fn depth_limit() {
        let law = MaterialLaw::euclidean(1.0, 1, 1).unwrap();
        assert!(matches!(
            lamination_envelope(&law, &MatrixArg::zeros(1, 1), 5, 8),
            Err(EnvelopeError::DepthTooLarge(5))
        ));
    }
}
