//! Energy densities and the closed-form scalar functions of the model.
//!
//! A [`MaterialLaw`] bundles the elastic density `Ψ`, the yield parameter `ℓ`
//! and the matrix dimensions. Everything downstream (envelopes, cell problems,
//! the phase-field solver) evaluates `Ψ`, its quadratic recession `Ψ∞` and the
//! capped density `h = Ψ ∧ ℓ Ψ^{1/2}` through this type.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LawError {
    #[error("dimension mismatch: law expects {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    DimensionMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite matrix entry at index {0}")]
    NonFinite(usize),
    #[error("damage argument {0} outside the admissible range")]
    DamageOutOfRange(f64),
    #[error("recession of custom law did not converge: estimates {at_1e3} (t=1e3) and {at_1e4} (t=1e4)")]
    NonConvergentRecession { at_1e3: f64, at_1e4: f64 },
}

/// A real `m × n` matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixArg {
    rows: usize,
    cols: usize,
    entries: SmallVec<[f64; 9]>,
}

impl MatrixArg {
    pub fn new(rows: usize, cols: usize, entries: &[f64]) -> Result<Self, LawError> {
        if rows == 0 || cols == 0 || entries.len() != rows * cols {
            return Err(LawError::InvalidParameter(format!(
                "{} entries cannot form a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        if let Some(i) = entries.iter().position(|x| !x.is_finite()) {
            return Err(LawError::NonFinite(i));
        }
        Ok(Self {
            rows,
            cols,
            entries: SmallVec::from_slice(entries),
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: SmallVec::from_elem(0.0, rows * cols),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.entries[i * n + i] = 1.0;
        }
        m
    }

    /// Outer product `a ⊗ b`.
    pub fn outer(a: &[f64], b: &[f64]) -> Self {
        let mut entries = SmallVec::with_capacity(a.len() * b.len());
        for &ai in a {
            for &bj in b {
                entries.push(ai * bj);
            }
        }
        Self {
            rows: a.len(),
            cols: b.len(),
            entries,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        frobenius(&self.entries)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|x| x * s).collect(),
        }
    }

    /// `self · other` (matrix product).
    pub fn matmul(&self, other: &MatrixArg) -> Result<Self, LawError> {
        if self.cols != other.rows {
            return Err(LawError::DimensionMismatch {
                expected_rows: self.cols,
                expected_cols: other.cols,
                rows: other.rows,
                cols: other.cols,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut s = 0.0;
                for k in 0..self.cols {
                    s += self.get(i, k) * other.get(k, j);
                }
                out.entries[i * other.cols + j] = s;
            }
        }
        Ok(out)
    }
}

impl fmt::Display for MatrixArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for i in 0..self.rows {
            if i > 0 {
                write!(f, "; ")?;
            }
            for j in 0..self.cols {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{}", self.get(i, j))?;
            }
        }
        write!(f, "]")
    }
}

pub(crate) fn frobenius(entries: &[f64]) -> f64 {
    entries.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub type PsiFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A user-supplied elastic density, evaluated on row-major entries.
#[derive(Clone)]
pub struct CustomPsi {
    pub name: String,
    pub eval: PsiFn,
    /// Declares `Ψ∞(ξ) = |ξ|²`, which makes the surface density depend on `|z|` only.
    pub euclidean_recession: bool,
    /// Declares `Ψ∞(ξ) ≥ Ψ∞(ξ ν⊗ν)` for all `ν`, which allows the sliced cell problem.
    pub sliceable: bool,
}

impl fmt::Debug for CustomPsi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPsi")
            .field("name", &self.name)
            .field("euclidean_recession", &self.euclidean_recession)
            .field("sliceable", &self.sliceable)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum PsiKind {
    /// `Ψ(ξ) = |ξ|²`.
    EuclideanSquared,
    /// `Ψ(ξ) = dist²(ξ, SO(n))`, for `n ∈ {2, 3}`.
    DistSqSo,
    Custom(CustomPsi),
}

impl PsiKind {
    pub fn name(&self) -> &str {
        match self {
            PsiKind::EuclideanSquared => "euclidean_squared",
            PsiKind::DistSqSo => "dist_sq_SOn",
            PsiKind::Custom(c) => &c.name,
        }
    }
}

/// Elastic law `(Ψ, ℓ)` on `m × n` matrices.
#[derive(Debug, Clone)]
pub struct MaterialLaw {
    ell: f64,
    kind: PsiKind,
    m: usize,
    n: usize,
    growth_const: f64,
}

impl MaterialLaw {
    /// `Ψ(ξ) = |ξ|²` on `m × n` matrices; growth constant 1.
    pub fn euclidean(ell: f64, m: usize, n: usize) -> Result<Self, LawError> {
        Self::build(ell, PsiKind::EuclideanSquared, m, n, 1.0)
    }

    /// `Ψ(ξ) = dist²(ξ, SO(n))`; growth constant `2n`.
    pub fn dist_sq_so(ell: f64, n: usize) -> Result<Self, LawError> {
        if !(2..=3).contains(&n) {
            return Err(LawError::InvalidParameter(format!(
                "dist_sq_SOn needs n in {{2, 3}}, got {n}"
            )));
        }
        Self::build(ell, PsiKind::DistSqSo, n, n, 2.0 * n as f64)
    }

    /// Custom density with a user-declared growth constant. The growth sandwich
    /// is checked on a deterministic sample of matrices.
    pub fn custom(ell: f64, psi: CustomPsi, m: usize, n: usize, growth_const: f64) -> Result<Self, LawError> {
        let law = Self::build(ell, PsiKind::Custom(psi), m, n, growth_const)?;
        law.check_growth(256, 0x5eed)?;
        Ok(law)
    }

    fn build(ell: f64, kind: PsiKind, m: usize, n: usize, c: f64) -> Result<Self, LawError> {
        if !(ell > 0.0 && ell.is_finite()) {
            return Err(LawError::InvalidParameter(format!("ell must be positive, got {ell}")));
        }
        if m == 0 || n == 0 {
            return Err(LawError::InvalidParameter("dimensions must be positive".into()));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(LawError::InvalidParameter(format!(
                "growth constant must be positive, got {c}"
            )));
        }
        Ok(Self {
            ell,
            kind,
            m,
            n,
            growth_const: c,
        })
    }

    /// Replaces the growth constant of a built-in law.
    pub fn with_growth_const(mut self, c: f64) -> Result<Self, LawError> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(LawError::InvalidParameter(format!(
                "growth constant must be positive, got {c}"
            )));
        }
        self.growth_const = c;
        self.check_growth(256, 0x5eed)?;
        Ok(self)
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn kind(&self) -> &PsiKind {
        &self.kind
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.m * self.n
    }

    pub fn growth_const(&self) -> f64 {
        self.growth_const
    }

    /// Whether `Ψ∞(ξ) = |ξ|²`.
    pub fn has_euclidean_recession(&self) -> bool {
        match &self.kind {
            PsiKind::EuclideanSquared | PsiKind::DistSqSo => true,
            PsiKind::Custom(c) => c.euclidean_recession,
        }
    }

    pub fn is_sliceable(&self) -> bool {
        match &self.kind {
            PsiKind::EuclideanSquared | PsiKind::DistSqSo => true,
            PsiKind::Custom(c) => c.sliceable,
        }
    }

    fn check_dims(&self, xi: &MatrixArg) -> Result<(), LawError> {
        if xi.rows != self.m || xi.cols != self.n {
            return Err(LawError::DimensionMismatch {
                expected_rows: self.m,
                expected_cols: self.n,
                rows: xi.rows,
                cols: xi.cols,
            });
        }
        Ok(())
    }

    /// `Ψ(ξ)`.
    pub fn psi_eval(&self, xi: &MatrixArg) -> Result<f64, LawError> {
        self.check_dims(xi)?;
        Ok(self.psi_raw(&xi.entries))
    }

    /// `Ψ∞(ξ) = lim Ψ(tξ)/t²`.
    pub fn psi_infty_eval(&self, xi: &MatrixArg) -> Result<f64, LawError> {
        self.check_dims(xi)?;
        self.psi_infty_raw(&xi.entries)
    }

    /// `h(ξ) = min(Ψ(ξ), ℓ Ψ(ξ)^{1/2})`.
    pub fn h_eval(&self, xi: &MatrixArg) -> Result<f64, LawError> {
        self.check_dims(xi)?;
        Ok(self.h_raw(&xi.entries))
    }

    /// Unchecked `Ψ` on row-major entries of length `m·n`.
    pub(crate) fn psi_raw(&self, e: &[f64]) -> f64 {
        debug_assert_eq!(e.len(), self.m * self.n);
        match &self.kind {
            PsiKind::EuclideanSquared => e.iter().map(|x| x * x).sum(),
            PsiKind::DistSqSo => dist_sq_so(e, self.n),
            PsiKind::Custom(c) => (c.eval)(e),
        }
    }

    pub(crate) fn h_raw(&self, e: &[f64]) -> f64 {
        let p = self.psi_raw(e).max(0.0);
        p.min(self.ell * p.sqrt())
    }

    pub(crate) fn psi_infty_raw(&self, e: &[f64]) -> Result<f64, LawError> {
        match &self.kind {
            PsiKind::EuclideanSquared | PsiKind::DistSqSo => Ok(e.iter().map(|x| x * x).sum()),
            PsiKind::Custom(c) => {
                if e.iter().all(|&x| x == 0.0) {
                    return Ok(0.0);
                }
                let at = |t: f64| {
                    let scaled: SmallVec<[f64; 9]> = e.iter().map(|x| x * t).collect();
                    (c.eval)(&scaled) / (t * t)
                };
                let (a, b) = (at(1e3), at(1e4));
                let scale = a.abs().max(b.abs());
                if !(a.is_finite() && b.is_finite()) || (a - b).abs() > 0.01 * scale {
                    return Err(LawError::NonConvergentRecession { at_1e3: a, at_1e4: b });
                }
                Ok(b)
            }
        }
    }

    /// Derivative of `Ψ` with respect to the matrix entries. Closed form for
    /// the built-in laws, central differences for custom ones.
    pub(crate) fn psi_grad_raw(&self, e: &[f64], out: &mut [f64]) {
        match &self.kind {
            PsiKind::EuclideanSquared => {
                for (o, x) in out.iter_mut().zip(e) {
                    *o = 2.0 * x;
                }
            }
            PsiKind::DistSqSo => {
                let r = nearest_rotation(e, self.n);
                for i in 0..e.len() {
                    out[i] = 2.0 * (e[i] - r[i]);
                }
            }
            PsiKind::Custom(c) => {
                let mut work: SmallVec<[f64; 9]> = SmallVec::from_slice(e);
                for i in 0..e.len() {
                    let step = 1e-6 * (1.0 + e[i].abs());
                    work[i] = e[i] + step;
                    let fp = (c.eval)(&work);
                    work[i] = e[i] - step;
                    let fm = (c.eval)(&work);
                    work[i] = e[i];
                    out[i] = (fp - fm) / (2.0 * step);
                }
            }
        }
    }

    /// Growth constant for `h`: `(1/C)|ξ| − C ≤ h(ξ) ≤ C(|ξ|+1)`, derived from
    /// the quadratic growth of `Ψ` with constant `c`.
    pub fn h_growth_const(&self) -> f64 {
        let c = self.growth_const;
        let l = self.ell;
        let sc = c.sqrt();
        (l * sc).max(sc / l).max((c * (l * l + c)).sqrt().sqrt()).max(1.0)
    }

    /// Checks `(1/c)|ξ|² − c ≤ Ψ(ξ) ≤ c(|ξ|² + 1)` on random matrices of norm up to 100.
    pub fn check_growth(&self, samples: usize, seed: u64) -> Result<(), LawError> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let c = self.growth_const;
        let mut e = vec![0.0; self.dim()];
        for k in 0..samples {
            let radius = 10f64.powf(rng.gen_range(-2.0..2.0));
            for x in e.iter_mut() {
                *x = rng.gen_range(-1.0..1.0);
            }
            let nrm = frobenius(&e).max(1e-300);
            for x in e.iter_mut() {
                *x *= radius / nrm;
            }
            let n2 = radius * radius;
            let p = self.psi_raw(&e);
            let tol = 1e-9 * (1.0 + n2);
            if !(p >= n2 / c - c - tol && p <= c * (n2 + 1.0) + tol && p >= -tol) {
                return Err(LawError::InvalidParameter(format!(
                    "growth condition with c={c} violated at sample {k}: |xi|^2={n2}, psi={p}"
                )));
            }
        }
        Ok(())
    }
}

/// `dist²(ξ, SO(n))` through the signed singular values of `ξ`.
fn dist_sq_so(e: &[f64], n: usize) -> f64 {
    let sv = signed_singular_values(e, n);
    let norm2: f64 = e.iter().map(|x| x * x).sum();
    norm2 + n as f64 - 2.0 * sv.iter().sum::<f64>()
}

/// Singular values sorted in decreasing order with the smallest one carrying
/// the sign of `det ξ`.
fn signed_singular_values(e: &[f64], n: usize) -> SmallVec<[f64; 3]> {
    match n {
        2 => {
            let m = Matrix2::from_row_slice(e);
            let det = m.determinant();
            let mut s: SmallVec<[f64; 3]> = m.singular_values().iter().copied().collect();
            s.sort_by(|a, b| b.total_cmp(a));
            if det < 0.0 {
                s[1] = -s[1];
            }
            s
        }
        3 => {
            let m = Matrix3::from_row_slice(e);
            let det = m.determinant();
            let mut s: SmallVec<[f64; 3]> = m.singular_values().iter().copied().collect();
            s.sort_by(|a, b| b.total_cmp(a));
            if det < 0.0 {
                s[2] = -s[2];
            }
            s
        }
        _ => unreachable!("dist_sq_SOn is restricted to n in {{2, 3}}"),
    }
}

/// The rotation closest to `ξ` in Frobenius norm, row-major.
fn nearest_rotation(e: &[f64], n: usize) -> SmallVec<[f64; 9]> {
    macro_rules! polar {
        ($mat:ty) => {{
            let m = <$mat>::from_row_slice(e);
            let svd = m.svd(true, true);
            let u = svd.u.unwrap();
            let vt = svd.v_t.unwrap();
            let mut r = u * vt;
            if r.determinant() < 0.0 {
                // flip the direction paired with the smallest singular value
                let (imin, _) = svd
                    .singular_values
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap();
                let mut d = <$mat>::identity();
                d[(imin, imin)] = -1.0;
                r = u * d * vt;
            }
            let mut out = SmallVec::new();
            for i in 0..n {
                for j in 0..n {
                    out.push(r[(i, j)]);
                }
            }
            out
        }};
    }
    match n {
        2 => polar!(Matrix2<f64>),
        3 => polar!(Matrix3<f64>),
        _ => unreachable!("dist_sq_SOn is restricted to n in {{2, 3}}"),
    }
}

/// Rotation in `SO(2)` by angle `theta`, row-major.
pub fn rotation2(theta: f64) -> MatrixArg {
    let (s, c) = theta.sin_cos();
    MatrixArg::new(2, 2, &[c, -s, s, c]).expect("finite rotation")
}

/// `f(s) = ℓ s / (1 − s)` on `[0, 1)`.
pub fn f_damage(s: f64, ell: f64) -> Result<f64, LawError> {
    if !(0.0..1.0).contains(&s) {
        return Err(LawError::DamageOutOfRange(s));
    }
    Ok(ell * s / (1.0 - s))
}

/// `f_ε(s) = min(1, √ε f(s))` for `s < 1`, and `f_ε(1) = 1`.
pub fn f_eps(s: f64, eps: f64, ell: f64) -> Result<f64, LawError> {
    if !(0.0..=1.0).contains(&s) {
        return Err(LawError::DamageOutOfRange(s));
    }
    if !(eps > 0.0) {
        return Err(LawError::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if s == 1.0 {
        return Ok(1.0);
    }
    Ok((eps.sqrt() * f_damage(s, ell)?).min(1.0))
}

/// Squared damage coefficient `f_ε²(s)` and its first two derivatives on the
/// branch `s < γ_ε`; above the kink the coefficient is the constant 1.
#[inline]
pub(crate) fn f_eps_sq_parts(s: f64, eps: f64, ell: f64) -> (f64, f64, f64) {
    let gamma = gamma_eps(eps, ell);
    if s >= gamma {
        return (1.0, 0.0, 0.0);
    }
    let one_m = 1.0 - s;
    let k = eps * ell * ell;
    let val = k * s * s / (one_m * one_m);
    let d1 = 2.0 * k * s / (one_m * one_m * one_m);
    let d2 = k * (2.0 + 4.0 * s) / (one_m * one_m * one_m * one_m);
    (val, d1, d2)
}

/// Threshold `γ_ε = 1/(1 + ℓ√ε)` above which `f_ε ≡ 1`.
pub fn gamma_eps(eps: f64, ell: f64) -> f64 {
    1.0 / (1.0 + ell * eps.sqrt())
}

/// Convex envelope of `t ↦ min(t², ℓt)` on `[0, ∞)`.
pub fn h_scal_conv(t: f64, ell: f64) -> f64 {
    if t <= 0.5 * ell {
        t * t
    } else {
        ell * t - 0.25 * ell * ell
    }
}

/// `min(t², ℓ t)` for `t ≥ 0`.
pub fn h_scal(t: f64, ell: f64) -> f64 {
    (t * t).min(ell * t)
}

/// `Φ(t) = t − t²/2`.
pub fn phi_map(t: f64) -> Result<f64, LawError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(LawError::InvalidParameter(format!("phi_map needs t in [0,1], got {t}")));
    }
    Ok(t - 0.5 * t * t)
}

/// Serializable description of a built-in law, as used by configs and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinPsi {
    #[serde(alias = "euclidean")]
    EuclideanSquared,
    #[serde(rename = "dist_sq_SOn", alias = "dist_sq_so")]
    DistSqSo,
}

impl std::str::FromStr for BuiltinPsi {
    type Err = LawError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean_squared" | "euclidean" | "simp" => Ok(BuiltinPsi::EuclideanSquared),
            "dist_sq_SOn" | "dist_sq_so" | "so" => Ok(BuiltinPsi::DistSqSo),
            other => Err(LawError::InvalidParameter(format!("unknown law '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawSpec {
    pub psi: BuiltinPsi,
    pub ell: f64,
    pub m: usize,
    pub n: usize,
}

impl LawSpec {
    pub fn build(&self) -> Result<MaterialLaw, LawError> {
        match self.psi {
            BuiltinPsi::EuclideanSquared => MaterialLaw::euclidean(self.ell, self.m, self.n),
            BuiltinPsi::DistSqSo => {
                if self.m != self.n {
                    return Err(LawError::InvalidParameter("dist_sq_SOn needs m = n".into()));
                }
                MaterialLaw::dist_sq_so(self.ell, self.n)
            }
        }
    }
}
