use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cell::{gscal_cell_with, solve_from, CellOptions, CellProfile};
use super::SurfaceError;

/// Per-amplitude record of the `T` ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    /// `(T, g_T(t))` for every rung of the ladder.
    pub g_by_t: Vec<(f64, f64)>,
    /// Extrapolation from the two largest `T` assuming an error `O(T⁻²)`.
    pub richardson: Option<f64>,
    /// `|g_{T_k} − g_{T_{k−1}}| / g_{T_k}` for the last doubling.
    pub rel_change: f64,
    /// Relative change within the 5% threshold.
    pub converged: bool,
    pub rounds: usize,
    pub stagnated: bool,
    /// Definitional form evaluated on the largest-`T` profile.
    pub definitional: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDensityCurve {
    pub ell: f64,
    pub amplitudes: Vec<f64>,
    pub g_values: Vec<f64>,
    #[serde(rename = "T_used")]
    pub t_used: f64,
    pub cells_per_unit: usize,
    pub extrapolation_meta: Vec<CurvePoint>,
}

const LADDER_FLAG: f64 = 0.05;

pub fn gscal_curve(
    ell: f64,
    amplitudes: &[f64],
    t_ladder: &[f64],
    cells_per_unit: usize,
) -> Result<SurfaceDensityCurve, SurfaceError> {
    gscal_curve_with(ell, amplitudes, t_ladder, cells_per_unit, &CellOptions::default())
}

/// Solves the cell problem for every amplitude on every rung of the `T`
/// ladder at fixed spacing. On each rung after the first the solver also
/// starts from the previous optimum extended by constants, and keeps the
/// lower energy, so `g_T` is nonincreasing along the ladder.
pub fn gscal_curve_with(
    ell: f64,
    amplitudes: &[f64],
    t_ladder: &[f64],
    cells_per_unit: usize,
    opts: &CellOptions,
) -> Result<SurfaceDensityCurve, SurfaceError> {
    if t_ladder.len() < 2 {
        return Err(SurfaceError::InvalidInput(
            "the T ladder needs at least two entries".into(),
        ));
    }
    if t_ladder.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SurfaceError::InvalidInput("the T ladder must be increasing".into()));
    }
    if amplitudes.windows(2).any(|w| !(w[1] > w[0])) || amplitudes.iter().any(|t| !(*t >= 0.0)) {
        return Err(SurfaceError::InvalidInput(
            "amplitudes must be nonnegative and increasing".into(),
        ));
    }
    let mut cells = Vec::with_capacity(t_ladder.len());
    for &tl in t_ladder {
        let c = tl * cells_per_unit as f64;
        if (c - c.round()).abs() > 1e-9 || !(c.round() as usize).is_multiple_of(2) {
            return Err(SurfaceError::InvalidInput(format!(
                "T = {tl} with {cells_per_unit} cells per unit does not give an even cell count"
            )));
        }
        cells.push(c.round() as usize);
    }
    let points: Vec<Result<(CurvePoint, f64), SurfaceError>> = amplitudes
        .par_iter()
        .map(|&t| ladder_point(t, ell, t_ladder, &cells, opts))
        .collect();
    let mut meta = Vec::with_capacity(points.len());
    let mut g_values = Vec::with_capacity(points.len());
    for p in points {
        let (point, g) = p?;
        meta.push(point);
        g_values.push(g);
    }
    Ok(SurfaceDensityCurve {
        ell,
        amplitudes: amplitudes.to_vec(),
        g_values,
        t_used: *t_ladder.last().expect("non-empty ladder"),
        cells_per_unit,
        extrapolation_meta: meta,
    })
}

fn extend(profile: &CellProfile, pad: usize) -> (Vec<f64>, Vec<f64>) {
    let mut alpha = vec![0.0; pad];
    alpha.extend_from_slice(&profile.alpha);
    alpha.extend(std::iter::repeat_n(profile.t, pad));
    let mut beta = vec![1.0; pad];
    beta.extend_from_slice(&profile.beta);
    beta.extend(std::iter::repeat_n(1.0, pad));
    (alpha, beta)
}

fn ladder_point(
    t: f64,
    ell: f64,
    ladder: &[f64],
    cells: &[usize],
    opts: &CellOptions,
) -> Result<(CurvePoint, f64), SurfaceError> {
    let mut prev: Option<CellProfile> = None;
    let mut g_by_t = Vec::with_capacity(ladder.len());
    let mut rounds = 0;
    let mut stagnated = false;
    for (&tl, &nc) in ladder.iter().zip(cells) {
        let mut best = gscal_cell_with(t, ell, tl, nc, opts)?;
        if let Some(p) = &prev {
            let pad = (nc - p.cells) / 2;
            if p.cells + 2 * pad == nc {
                let (a, b) = extend(p, pad);
                let warm = solve_from(t, ell, tl, a, b, opts)?;
                if warm.energy < best.energy {
                    best = warm;
                }
            }
        }
        rounds += best.rounds;
        stagnated |= best.stagnated && !best.converged;
        g_by_t.push((tl, best.energy));
        prev = Some(best);
    }
    let last = prev.expect("non-empty ladder");
    let n = g_by_t.len();
    let (t1, g1) = g_by_t[n - 2];
    let (t2, g2) = g_by_t[n - 1];
    let rel_change = if g2 > 0.0 { (g2 - g1).abs() / g2 } else { 0.0 };
    let q = t2 / t1;
    let richardson = if t > 0.0 {
        Some(g2 + (g2 - g1) / (q * q - 1.0))
    } else {
        None
    };
    let point = CurvePoint {
        t,
        g_by_t,
        richardson,
        rel_change,
        converged: rel_change <= LADDER_FLAG,
        rounds,
        stagnated,
        definitional: last.definitional_energy(),
    };
    Ok((point, g2))
}

impl SurfaceDensityCurve {
    /// Linear interpolation; below the first amplitude the curve is joined to
    /// `(0, 0)`. Amplitudes beyond the computed range are refused.
    pub fn g_at(&self, t: f64) -> Result<f64, SurfaceError> {
        let max = self.amplitudes.last().copied().unwrap_or(0.0);
        if !(t >= 0.0) || t > max * (1.0 + 1e-12) {
            return Err(SurfaceError::OutOfRange { t, max });
        }
        let (a, g) = (&self.amplitudes, &self.g_values);
        if t <= a[0] {
            return Ok(if a[0] > 0.0 { g[0] * t / a[0] } else { g[0] });
        }
        let j = a.partition_point(|&x| x < t).min(a.len() - 1);
        let s = (t - a[j - 1]) / (a[j] - a[j - 1]);
        Ok((1.0 - s) * g[j - 1] + s * g[j])
    }

    pub fn max_amplitude(&self) -> f64 {
        self.amplitudes.last().copied().unwrap_or(0.0)
    }

    /// Violations of `0 ≤ g ≤ min(1, ℓt)·(1+tol)`.
    pub fn bound_violations(&self, tol: f64) -> Vec<(f64, f64)> {
        self.amplitudes
            .iter()
            .zip(&self.g_values)
            .filter(|(&t, &g)| g < 0.0 || g > (self.ell * t).min(1.0) * (1.0 + tol))
            .map(|(&t, &g)| (t, g))
            .collect()
    }

    /// Lattice pairs `(t_i, t_j)` with `g(t_i + t_j) > (g_i + g_j)(1 + slack)`.
    pub fn subadditivity_violations(&self, slack: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let max = self.max_amplitude();
        for i in 0..self.amplitudes.len() {
            for j in i..self.amplitudes.len() {
                let s = self.amplitudes[i] + self.amplitudes[j];
                if s > max {
                    continue;
                }
                let lhs = self.g_at(s).expect("within range");
                let rhs = self.g_values[i] + self.g_values[j];
                if lhs > rhs * (1.0 + slack) {
                    out.push((self.amplitudes[i], self.amplitudes[j]));
                }
            }
        }
        out
    }

    /// Smallest `C ≥ 1` with `(1/C)·min(t,1) ≤ g ≤ C·min(t,1)` on the nonzero amplitudes.
    pub fn coercivity_constant(&self) -> f64 {
        let mut c: f64 = 1.0;
        for (&t, &g) in self.amplitudes.iter().zip(&self.g_values) {
            if t > 0.0 {
                let m = t.min(1.0);
                c = c.max(g / m).max(m / g.max(1e-300));
            }
        }
        c
    }

    pub fn save(&self, path: &Path) -> Result<(), SurfaceError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            serde_json::to_writer_pretty(&mut f, self)?;
            f.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SurfaceError> {
        let f = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_amplitude_curve() {
        let c = gscal_curve(1.0, &[0.0], &[8.0, 16.0], 16).unwrap();
        assert_eq!(c.g_values, vec![0.0]);
        assert_eq!(c.g_at(0.0).unwrap(), 0.0);
        assert!(c.g_at(0.1).is_err());
    }

    #[test]
    fn ladder_is_monotone_in_t() {
        let c = gscal_curve(1.0, &[0.1, 0.5, 2.0], &[8.0, 16.0], 32).unwrap();
        for p in &c.extrapolation_meta {
            assert!(p.g_by_t[1].1 <= p.g_by_t[0].1 + 1e-9, "{:?}", p.g_by_t);
        }
    }

    #[test]
    fn rejects_odd_cells_and_short_ladders() {
        assert!(gscal_curve(1.0, &[0.1], &[16.0], 32).is_err());
        assert!(gscal_curve(1.0, &[0.1], &[5.0, 10.0], 13).is_err());
    }
}
