use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EnvelopeError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl AxisSpec {
    pub fn new(min: f64, max: f64, count: usize) -> Result<Self, EnvelopeError> {
        if count < 2 || !(max > min) || !min.is_finite() || !max.is_finite() {
            return Err(EnvelopeError::InvalidGrid(format!(
                "axis ({min}, {max}, {count}) needs max > min and at least 2 nodes"
            )));
        }
        Ok(Self { min, max, count })
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.count - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.max
        } else {
            self.min + self.step() * i as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.node(i)).collect()
    }

    /// Lower cell index and local coordinate in `[0, 1]` of `x`.
    fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let slack = 1e-12 * (self.max - self.min);
        if x < self.min - slack || x > self.max + slack {
            return None;
        }
        let s = ((x - self.min) / self.step()).clamp(0.0, (self.count - 1) as f64);
        let i = (s.floor() as usize).min(self.count - 2);
        Some((i, s - i as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GridSpec {
    /// Tensor grid over the row-major matrix entries.
    Axes { axes: Vec<AxisSpec> },
    /// Values along rays `r·dir`; queries use the closest direction.
    Radial { directions: Vec<Vec<f64>>, radii: Vec<f64> },
}

impl GridSpec {
    pub fn axes(axes: Vec<AxisSpec>) -> Self {
        GridSpec::Axes { axes }
    }

    pub fn len(&self) -> usize {
        match self {
            GridSpec::Axes { axes } => axes.iter().map(|a| a.count).product(),
            GridSpec::Radial { directions, radii } => directions.len() * radii.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            GridSpec::Axes { axes } => axes.len(),
            GridSpec::Radial { directions, .. } => directions.first().map_or(0, |d| d.len()),
        }
    }

    /// Coordinates of the flat node index `k` (last axis fastest).
    pub fn point(&self, k: usize) -> Vec<f64> {
        match self {
            GridSpec::Axes { axes } => {
                let mut rem = k;
                let mut p = vec![0.0; axes.len()];
                for (d, ax) in axes.iter().enumerate().rev() {
                    p[d] = ax.node(rem % ax.count);
                    rem /= ax.count;
                }
                p
            }
            GridSpec::Radial { directions, radii } => {
                let dir = &directions[k / radii.len()];
                let r = radii[k % radii.len()];
                dir.iter().map(|x| x * r).collect()
            }
        }
    }

    /// Whether the point lies in the central `fraction` of every axis.
    pub fn in_interior(&self, p: &[f64], fraction: f64) -> bool {
        match self {
            GridSpec::Axes { axes } => axes.iter().zip(p).all(|(ax, &x)| {
                let margin = 0.5 * (1.0 - fraction) * (ax.max - ax.min);
                x >= ax.min + margin - 1e-12 && x <= ax.max - margin + 1e-12
            }),
            GridSpec::Radial { radii, .. } => {
                let r = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                let rmax = radii.last().copied().unwrap_or(0.0);
                r <= fraction * rmax
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    Convex,
    LaminationDepthK,
    Recession,
}

/// A sampled envelope with interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeTable {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub kind: EnvelopeKind,
    pub depth: usize,
    /// Creation parameters, kept for provenance of saved tables.
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
}

impl EnvelopeTable {
    pub fn new(grid: GridSpec, values: Vec<f64>, kind: EnvelopeKind, depth: usize) -> Result<Self, EnvelopeError> {
        if values.len() != grid.len() {
            return Err(EnvelopeError::InvalidGrid(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some((k, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(EnvelopeError::NonFinite { t: k as f64, value: *v });
        }
        Ok(Self {
            grid,
            values,
            kind,
            depth,
            params: BTreeMap::new(),
        })
    }

    pub fn with_param(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    /// Multilinear interpolation on tensor grids; along-ray linear
    /// interpolation on the closest direction for radial grids.
    pub fn query(&self, x: &[f64]) -> Result<f64, EnvelopeError> {
        if x.len() != self.grid.dim() {
            return Err(EnvelopeError::InvalidGrid(format!(
                "query of dimension {} on a {}-dimensional table",
                x.len(),
                self.grid.dim()
            )));
        }
        match &self.grid {
            GridSpec::Axes { axes } => {
                let mut cells = Vec::with_capacity(axes.len());
                for (ax, &xi) in axes.iter().zip(x) {
                    cells.push(ax.locate(xi).ok_or_else(|| EnvelopeError::OutOfRange(x.to_vec()))?);
                }
                let d = axes.len();
                let mut strides = vec![1usize; d];
                for k in (0..d.saturating_sub(1)).rev() {
                    strides[k] = strides[k + 1] * axes[k + 1].count;
                }
                let mut acc = 0.0;
                for corner in 0..(1usize << d) {
                    let mut w = 1.0;
                    let mut idx = 0;
                    for k in 0..d {
                        let (i, s) = cells[k];
                        if corner >> k & 1 == 1 {
                            w *= s;
                            idx += (i + 1) * strides[k];
                        } else {
                            w *= 1.0 - s;
                            idx += i * strides[k];
                        }
                    }
                    if w != 0.0 {
                        acc += w * self.values[idx];
                    }
                }
                Ok(acc)
            }
            GridSpec::Radial { directions, radii } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let rmax = *radii.last().expect("non-empty radii");
                if r > rmax * (1.0 + 1e-12) || r < radii[0] * (1.0 - 1e-12) {
                    return Err(EnvelopeError::OutOfRange(x.to_vec()));
                }
                let (di, _) = directions
                    .iter()
                    .enumerate()
                    .map(|(i, d)| (i, d.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()))
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("non-empty direction set");
                let row = &self.values[di * radii.len()..(di + 1) * radii.len()];
                let j = radii.partition_point(|&q| q <= r).clamp(1, radii.len() - 1);
                let (r0, r1) = (radii[j - 1], radii[j]);
                let s = ((r - r0) / (r1 - r0)).clamp(0.0, 1.0);
                Ok((1.0 - s) * row[j - 1] + s * row[j])
            }
        }
    }

    /// Writes the table as JSON through a temporary file and a rename.
    pub fn save(&self, path: &Path) -> Result<(), EnvelopeError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            serde_json::to_writer(&mut f, self)?;
            f.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EnvelopeError> {
        let f = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}
