use super::{EnvelopeError, EnvelopeTable};
use crate::material_laws::{MaterialLaw, MatrixArg};

/// A unit matrix direction and the radii at which a function is probed.
#[derive(Debug, Clone, PartialEq)]
pub struct RayProbe {
    direction: MatrixArg,
    radii: Vec<f64>,
}

impl RayProbe {
    pub fn new(direction: MatrixArg, radii: Vec<f64>) -> Result<Self, EnvelopeError> {
        let nrm = direction.norm();
        if (nrm - 1.0).abs() > 1e-12 {
            return Err(EnvelopeError::InvalidProbe(format!(
                "direction has norm {nrm}, expected 1"
            )));
        }
        if radii.windows(2).any(|w| !(w[1] > w[0])) || radii.iter().any(|r| !(*r >= 0.0)) {
            return Err(EnvelopeError::InvalidProbe(
                "radii must be nonnegative and increasing".into(),
            ));
        }
        Ok(Self { direction, radii })
    }

    /// `per_decade` log-spaced radii on `[10^lo, 10^hi]`.
    pub fn log_spaced(direction: MatrixArg, lo: i32, hi: i32, per_decade: usize) -> Result<Self, EnvelopeError> {
        let count = (hi - lo) as usize * per_decade + 1;
        let radii = (0..count)
            .map(|k| 10f64.powf(lo as f64 + k as f64 / per_decade as f64))
            .collect();
        Self::new(direction, radii)
    }

    pub fn direction(&self) -> &MatrixArg {
        &self.direction
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }
}

pub enum RecessionSource<'a> {
    /// The capped density `h` of a law.
    Law(&'a MaterialLaw),
    Table(&'a EnvelopeTable),
    Function(&'a dyn Fn(&[f64]) -> f64),
}

impl RecessionSource<'_> {
    fn eval(&self, x: &[f64]) -> Result<f64, EnvelopeError> {
        match self {
            RecessionSource::Law(law) => {
                if x.len() != law.dim() {
                    return Err(EnvelopeError::InvalidProbe(format!(
                        "probe of dimension {} for a law on {} entries",
                        x.len(),
                        law.dim()
                    )));
                }
                Ok(law.h_raw(x))
            }
            RecessionSource::Table(t) => t.query(x),
            RecessionSource::Function(f) => Ok(f(x)),
        }
    }
}

/// Recession `lim value(t·dir)/t` along a unit probe.
pub fn recession_numeric(source: &RecessionSource<'_>, probe: &RayProbe) -> Result<f64, EnvelopeError> {
    recession_along(source, probe.direction.entries(), &probe.radii)
}

/// Least-squares slope of `value(t·xi)` against `t` on each decade of radii.
/// The top decade's slope is returned; decades disagreeing with it by more
/// than 5% signal that the limit is not reached.
pub fn recession_along(source: &RecessionSource<'_>, xi: &[f64], radii: &[f64]) -> Result<f64, EnvelopeError> {
    let positive: Vec<f64> = radii.iter().copied().filter(|&r| r > 0.0).collect();
    let (rmin, rmax) = match (positive.first(), positive.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(EnvelopeError::InvalidProbe("no positive radii".into())),
    };
    if rmax / rmin < 100.0 * (1.0 - 1e-12) {
        return Err(EnvelopeError::InvalidProbe(format!(
            "radii span [{rmin}, {rmax}], at least two decades are required"
        )));
    }
    let mut samples = Vec::with_capacity(positive.len());
    let mut point = vec![0.0; xi.len()];
    for &t in &positive {
        for (p, x) in point.iter_mut().zip(xi) {
            *p = t * x;
        }
        let v = source.eval(&point)?;
        if !v.is_finite() {
            return Err(EnvelopeError::NonFinite { t, value: v });
        }
        samples.push((t, v));
    }
    // decades counted downward from the largest radius
    let mut slopes = Vec::new();
    let mut upper = rmax;
    while upper / 10.0 >= rmin * (1.0 - 1e-12) {
        let lower = upper / 10.0;
        let pts: Vec<(f64, f64)> = samples
            .iter()
            .copied()
            .filter(|&(t, _)| t >= lower * (1.0 - 1e-12) && t <= upper * (1.0 + 1e-12))
            .collect();
        if pts.len() >= 2 {
            slopes.push(ls_slope(&pts));
        }
        upper = lower;
    }
    let top = *slopes
        .first()
        .ok_or_else(|| EnvelopeError::InvalidProbe("each decade needs two radii".into()))?;
    let scale = top.abs().max(1e-12);
    if slopes.iter().any(|s| (s - top).abs() > 0.05 * scale) {
        return Err(EnvelopeError::NonConvergentRecession { slopes });
    }
    Ok(top.max(0.0))
}

fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - mv)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_has_its_slope() {
        let f = |x: &[f64]| 3.0 * x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let probe = RayProbe::log_spaced(MatrixArg::new(1, 1, &[1.0]).unwrap(), 1, 4, 5).unwrap();
        let s = recession_numeric(&RecessionSource::Function(&f), &probe).unwrap();
        assert!((s - 3.0).abs() < 1e-9);
    }

    #[test]
    fn superlinear_growth_is_reported() {
        let f = |x: &[f64]| x[0] * x[0];
        let probe = RayProbe::log_spaced(MatrixArg::new(1, 1, &[1.0]).unwrap(), 1, 3, 5).unwrap();
        assert!(matches!(
            recession_numeric(&RecessionSource::Function(&f), &probe),
            Err(EnvelopeError::NonConvergentRecession { .. })
        ));
    }

    #[test]
    fn probe_validation() {
        let d = MatrixArg::new(1, 2, &[1.0, 1.0]).unwrap();
        assert!(RayProbe::new(d, vec![1.0, 100.0]).is_err());
        let f = |_: &[f64]| 0.0;
        let unit = MatrixArg::new(1, 1, &[1.0]).unwrap();
        let short = RayProbe::new(unit, vec![1.0, 2.0, 5.0]).unwrap();
        assert!(recession_numeric(&RecessionSource::Function(&f), &short).is_err());
    }
}
