use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use super::{AxisSpec, EnvelopeError, EnvelopeKind, EnvelopeTable, GridSpec};
use crate::material_laws::{h_scal, MaterialLaw};

const MAX_GRID: usize = 10_000_000;

/// A scalar function of `t ≥ 0`, with an optional known recession slope
/// `lim f(t)/t` that lets the hull extend past the sampled range.
#[derive(Clone)]
pub struct ScalarFunction {
    pub name: String,
    pub eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub recession_slope: Option<f64>,
}

impl fmt::Debug for ScalarFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarFunction")
            .field("name", &self.name)
            .field("recession_slope", &self.recession_slope)
            .finish()
    }
}

impl ScalarFunction {
    pub fn new(name: &str, eval: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.to_string(),
            eval: Arc::new(eval),
            recession_slope: None,
        }
    }

    pub fn with_recession(mut self, slope: f64) -> Self {
        self.recession_slope = Some(slope);
        self
    }

    /// `t ↦ min(t², ℓt)`, whose recession slope is `ℓ`.
    pub fn h_scal(ell: f64) -> Self {
        Self::new("h_scal", move |t| h_scal(t, ell)).with_recession(ell)
    }
}

/// Lower convex hull of points sorted by abscissa (monotone chain). Collinear
/// middle points are dropped, so ties resolve to the earlier vertex.
fn lower_hull(xs: &[f64], fs: &[f64]) -> Vec<usize> {
    let mut hull: Vec<usize> = Vec::with_capacity(xs.len());
    for i in 0..xs.len() {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let cross = (xs[b] - xs[a]) * (fs[i] - fs[a]) - (fs[b] - fs[a]) * (xs[i] - xs[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    hull
}

/// Convex envelope of `f` sampled on `[0, 1.5·t_max]`. The extra half of the
/// range keeps the hull undistorted on `[0, t_max]`; when `f` carries a
/// recession slope the hull is closed by a ray of that slope instead of the
/// last chord.
pub fn convex_envelope_1d(f: &ScalarFunction, t_max: f64, samples: usize) -> Result<EnvelopeTable, EnvelopeError> {
    if samples < 16 {
        return Err(EnvelopeError::InvalidGrid(format!(
            "need at least 16 samples, got {samples}"
        )));
    }
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(EnvelopeError::InvalidGrid(format!(
            "t_max must be positive, got {t_max}"
        )));
    }
    let axis = AxisSpec::new(0.0, 1.5 * t_max, samples)?;
    let xs = axis.nodes();
    let mut fs = Vec::with_capacity(samples);
    for &t in &xs {
        let v = (f.eval)(t);
        if !v.is_finite() {
            return Err(EnvelopeError::NonFinite { t, value: v });
        }
        fs.push(v);
    }
    let mut hull = lower_hull(&xs, &fs);
    if let Some(slope) = f.recession_slope {
        // vertex where the hull slope first exceeds the recession slope
        let cut = hull
            .windows(2)
            .position(|w| (fs[w[1]] - fs[w[0]]) / (xs[w[1]] - xs[w[0]]) > slope)
            .unwrap_or(hull.len() - 1);
        hull.truncate(cut + 1);
    }
    let slope = f.recession_slope;
    let mut values = Vec::with_capacity(samples);
    let mut seg = 0;
    for &t in &xs {
        while seg + 1 < hull.len() && xs[hull[seg + 1]] < t {
            seg += 1;
        }
        let a = hull[seg];
        let v = if seg + 1 < hull.len() {
            let b = hull[seg + 1];
            let s = (t - xs[a]) / (xs[b] - xs[a]);
            fs[a] + s * (fs[b] - fs[a])
        } else if t <= xs[a] {
            fs[a]
        } else {
            fs[a] + slope.unwrap_or(0.0) * (t - xs[a])
        };
        values.push(v.max(0.0));
    }
    Ok(
        EnvelopeTable::new(GridSpec::axes(vec![axis]), values, EnvelopeKind::Convex, 0)?
            .with_param("function", f.name.clone())
            .with_param("t_max", t_max)
            .with_param("samples", samples),
    )
}

/// Discrete conjugate `out[j] = max_i (ps[j]·xs[i] − fs[i])` in linear time.
/// Entries `fs[i] = +∞` are ignored; with no finite entry the result is `−∞`.
fn conjugate_line(xs: &[f64], fs: &[f64], ps: &[f64], out: &mut [f64], scratch: &mut Vec<usize>) {
    scratch.clear();
    for i in 0..xs.len() {
        if !fs[i].is_finite() {
            continue;
        }
        while scratch.len() >= 2 {
            let a = scratch[scratch.len() - 2];
            let b = scratch[scratch.len() - 1];
            let cross = (xs[b] - xs[a]) * (fs[i] - fs[a]) - (fs[b] - fs[a]) * (xs[i] - xs[a]);
            if cross <= 0.0 {
                scratch.pop();
            } else {
                break;
            }
        }
        scratch.push(i);
    }
    if scratch.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::NEG_INFINITY);
        return;
    }
    let hull = &scratch[..];
    let mut k = 0;
    for (j, &p) in ps.iter().enumerate() {
        while k + 1 < hull.len() {
            let (a, b) = (hull[k], hull[k + 1]);
            let edge = (fs[b] - fs[a]) / (xs[b] - xs[a]);
            if edge < p {
                k += 1;
            } else {
                break;
            }
        }
        let i = hull[k];
        out[j] = p * xs[i] - fs[i];
    }
}

/// Applies [`conjugate_line`] along `axis` of a row-major array.
fn conjugate_axis(data: &[f64], shape: &[usize], axis: usize, xs: &[f64], ps: &[f64]) -> Vec<f64> {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let nx = shape[axis];
    let np = ps.len();
    let mut out = vec![0.0; outer * np * inner];
    out.par_chunks_mut(np * inner).enumerate().for_each(|(o, block)| {
        let mut line = vec![0.0; nx];
        let mut res = vec![0.0; np];
        let mut scratch = Vec::with_capacity(nx);
        for q in 0..inner {
            for i in 0..nx {
                line[i] = data[o * nx * inner + i * inner + q];
            }
            conjugate_line(xs, &line, ps, &mut res, &mut scratch);
            for j in 0..np {
                block[j * inner + q] = res[j];
            }
        }
    });
    out
}

/// `f*` by successive one-dimensional transforms, last axis first.
fn conjugate_nd(data: &[f64], xs: &[Vec<f64>], ps: &[Vec<f64>]) -> Vec<f64> {
    let d = xs.len();
    let mut shape: Vec<usize> = xs.iter().map(|x| x.len()).collect();
    let mut cur = data.to_vec();
    for axis in (0..d).rev() {
        cur = conjugate_axis(&cur, &shape, axis, &xs[axis], &ps[axis]);
        shape[axis] = ps[axis].len();
        if axis > 0 {
            cur.iter_mut().for_each(|v| *v = -*v);
        }
    }
    cur
}

fn index_to_point(k: usize, grids: &[Vec<f64>], p: &mut [f64]) {
    let mut rem = k;
    for d in (0..grids.len()).rev() {
        let n = grids[d].len();
        p[d] = grids[d][rem % n];
        rem /= n;
    }
}

/// Convex envelope of `h` over a tensor grid of matrix entries by the double
/// discrete Legendre–Fenchel transform.
///
/// The slope grid covers the ball that contains the domain of `h*`
/// (radius `ℓ` when `Ψ∞ = |·|²`, `ℓ√c` otherwise); slopes outside it are set
/// to `+∞` before the second transform, which removes the bias a finite box
/// would otherwise introduce on the linear branch.
pub fn convex_envelope_grid(law: &MaterialLaw, axes: &[AxisSpec]) -> Result<EnvelopeTable, EnvelopeError> {
    if axes.len() != law.dim() {
        return Err(EnvelopeError::InvalidGrid(format!(
            "{} axes for a law on {}x{} matrices",
            axes.len(),
            law.m(),
            law.n()
        )));
    }
    let radius = if law.has_euclidean_recession() {
        law.ell()
    } else {
        law.ell() * law.growth_const().sqrt()
    };
    let xs: Vec<Vec<f64>> = axes.iter().map(|a| a.nodes()).collect();
    let ps: Vec<Vec<f64>> = axes
        .iter()
        .map(|a| {
            let k = 2 * a.count + 1;
            (0..k)
                .map(|j| -radius + 2.0 * radius * j as f64 / (k - 1) as f64)
                .collect()
        })
        .collect();
    let nx: usize = xs.iter().map(|v| v.len()).product();
    let np: usize = ps.iter().map(|v| v.len()).product();
    if nx > MAX_GRID || np > MAX_GRID {
        return Err(EnvelopeError::InvalidGrid(format!(
            "grid of {nx} points (slope grid {np}) exceeds the limit of {MAX_GRID}"
        )));
    }
    let d = axes.len();
    let fvals: Vec<f64> = (0..nx)
        .into_par_iter()
        .map_init(
            || vec![0.0; d],
            |p, k| {
                index_to_point(k, &xs, p);
                law.h_raw(p)
            },
        )
        .collect();
    let mut fstar = conjugate_nd(&fvals, &xs, &ps);
    let mut p = vec![0.0; d];
    let limit = radius * radius * (1.0 + 1e-12);
    for (k, v) in fstar.iter_mut().enumerate() {
        index_to_point(k, &ps, &mut p);
        if p.iter().map(|x| x * x).sum::<f64>() > limit {
            *v = f64::INFINITY;
        }
    }
    let fss = conjugate_nd(&fstar, &ps, &xs);
    let grid = GridSpec::axes(axes.to_vec());
    let mut values = Vec::with_capacity(nx);
    let mut worst = (0.0, 0usize);
    for k in 0..nx {
        let v = fss[k];
        if !v.is_finite() {
            return Err(EnvelopeError::NonFinite { t: k as f64, value: v });
        }
        index_to_point(k, &xs, &mut p);
        let excess = v - fvals[k] - 1e-9 * (1.0 + fvals[k]);
        if excess > worst.0 && grid.in_interior(&p, 0.8) {
            worst = (excess, k);
        }
        values.push(v.max(0.0));
    }
    if worst.0 > 0.0 {
        return Err(EnvelopeError::NotCertified {
            excess: worst.0,
            at: grid.point(worst.1),
        });
    }
    Ok(EnvelopeTable::new(grid, values, EnvelopeKind::Convex, 0)?
        .with_param("psi", law.kind().name())
        .with_param("ell", law.ell())
        .with_param("slope_radius", radius))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material_laws::h_scal_conv;

    #[test]
    fn hull_1d_reproduces_closed_form() {
        let t = convex_envelope_1d(&ScalarFunction::h_scal(1.0), 3.0, 20_001).unwrap();
        assert!((t.query(&[0.4]).unwrap() - 0.16).abs() < 1e-8);
        assert!((t.query(&[2.0]).unwrap() - 1.75).abs() < 1e-8);
    }

    #[test]
    fn hull_of_convex_function_is_identity() {
        let t = convex_envelope_1d(&ScalarFunction::new("square", |t| t * t), 2.0, 4001).unwrap();
        let xs = match &t.grid {
            GridSpec::Axes { axes } => axes[0].nodes(),
            _ => unreachable!(),
        };
        for (x, v) in xs.iter().zip(&t.values) {
            assert!((v - x * x).abs() < 1e-9);
        }
    }

    #[test]
    fn hull_rejects_nan() {
        let f = ScalarFunction::new("bad", |t| if t > 1.0 { f64::NAN } else { t });
        assert!(matches!(
            convex_envelope_1d(&f, 1.0, 100),
            Err(EnvelopeError::NonFinite { .. })
        ));
        assert!(convex_envelope_1d(&ScalarFunction::h_scal(1.0), 1.0, 8).is_err());
    }

    #[test]
    fn discrete_conjugate_of_square() {
        let xs: Vec<f64> = (0..2001).map(|i| -2.0 + 0.002 * i as f64).collect();
        let fs: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let ps = vec![-1.0, 0.0, 0.5, 2.0];
        let mut out = vec![0.0; 4];
        conjugate_line(&xs, &fs, &ps, &mut out, &mut Vec::new());
        for (p, v) in ps.iter().zip(&out) {
            assert!((v - p * p / 4.0).abs() < 1e-6);
        }
    }

    #[test]
    fn grid_envelope_scalar_case() {
        let law = MaterialLaw::euclidean(1.0, 1, 1).unwrap();
        let t = convex_envelope_grid(&law, &[AxisSpec::new(-3.0, 3.0, 6001).unwrap()]).unwrap();
        assert!((t.query(&[0.75]).unwrap() - 0.5).abs() < 1e-6);
        assert!((t.query(&[-2.0]).unwrap() - 1.75).abs() < 1e-6);
        assert!(t.query(&[0.0]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn grid_envelope_row_vector_case() {
        let law = MaterialLaw::euclidean(1.0, 1, 2).unwrap();
        let ax = AxisSpec::new(-2.0, 2.0, 201).unwrap();
        let t = convex_envelope_grid(&law, &[ax, ax]).unwrap();
        let v = t.query(&[0.3 * 0.6, 0.3 * 0.8]).unwrap();
        assert!((v - 0.09).abs() < 1e-3, "{v}");
        let v = t.query(&[1.2 * 0.6, -1.2 * 0.8]).unwrap();
        assert!((v - h_scal_conv(1.2, 1.0)).abs() < 1e-2 * 0.95, "{v}");
    }
}
