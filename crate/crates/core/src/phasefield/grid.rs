use serde::{Deserialize, Serialize};

use super::PhaseFieldError;

/// Structured grid on the box `Π [0, extent_d]` with `nodes_d` nodes per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub extent: Vec<f64>,
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    XMin,
    XMax,
    YMin,
    YMax,
}

impl GridSpec {
    pub fn bar(length: f64, nodes: usize) -> Self {
        Self {
            extent: vec![length],
            nodes: vec![nodes],
        }
    }

    pub fn rect(lx: f64, ly: f64, nx: usize, ny: usize) -> Self {
        Self {
            extent: vec![lx, ly],
            nodes: vec![nx, ny],
        }
    }

    pub fn validate(&self) -> Result<(), PhaseFieldError> {
        let d = self.extent.len();
        if !(1..=2).contains(&d) || self.nodes.len() != d {
            return Err(PhaseFieldError::InvalidGrid(format!(
                "need 1 or 2 axes with matching node counts, got extent {:?} and nodes {:?}",
                self.extent, self.nodes
            )));
        }
        if self.nodes.iter().any(|&n| n < 3) {
            return Err(PhaseFieldError::InvalidGrid(format!(
                "need at least 3 nodes per axis, got {:?}",
                self.nodes
            )));
        }
        if self.extent.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(PhaseFieldError::InvalidGrid(format!(
                "extents must be positive, got {:?}",
                self.extent
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.extent.len()
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.extent
            .iter()
            .zip(&self.nodes)
            .map(|(e, &n)| e / (n - 1) as f64)
            .collect()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.iter().product()
    }

    /// Coordinates of node `k`; the first axis runs fastest.
    pub fn coords(&self, k: usize) -> [f64; 2] {
        let h = self.spacing();
        let nx = self.nodes[0];
        let (i, j) = (k % nx, k / nx);
        if self.dim() == 1 {
            [h[0] * i as f64, 0.0]
        } else {
            [h[0] * i as f64, h[1] * j as f64]
        }
    }

    pub fn volume(&self) -> f64 {
        self.extent.iter().product()
    }

    pub fn face_nodes(&self, face: Face) -> Result<Vec<usize>, PhaseFieldError> {
        let nx = self.nodes[0];
        let ny = if self.dim() == 2 { self.nodes[1] } else { 1 };
        let out = match face {
            Face::XMin => (0..ny).map(|j| j * nx).collect(),
            Face::XMax => (0..ny).map(|j| j * nx + nx - 1).collect(),
            Face::YMin | Face::YMax if self.dim() == 1 => {
                return Err(PhaseFieldError::InvalidConfig(format!("face {face:?} on a 1D grid")))
            }
            Face::YMin => (0..nx).collect(),
            Face::YMax => (0..nx).map(|i| (ny - 1) * nx + i).collect(),
        };
        Ok(out)
    }

    /// Same box with the spacing halved on every axis.
    pub fn refined(&self) -> Self {
        Self {
            extent: self.extent.clone(),
            nodes: self.nodes.iter().map(|n| 2 * (n - 1) + 1).collect(),
        }
    }
}

/// P1 element: a segment in 1D or a triangle in 2D.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Element {
    pub nodes: [usize; 3],
    pub vol: f64,
    /// Gradients of the nodal basis functions.
    pub grad: [[f64; 2]; 3],
}

#[derive(Debug, Clone)]
pub(crate) struct Mesh {
    pub dim: usize,
    /// Nodes per element.
    pub k: usize,
    pub elements: Vec<Element>,
    /// Lumped nodal weights (trapezoidal rule).
    pub lumped: Vec<f64>,
    pub node_count: usize,
}

impl Mesh {
    pub fn new(grid: &GridSpec) -> Result<Self, PhaseFieldError> {
        grid.validate()?;
        let h = grid.spacing();
        let n = grid.node_count();
        let mut elements = Vec::new();
        let mut lumped = vec![0.0; n];
        if grid.dim() == 1 {
            let hx = h[0];
            for a in 0..grid.nodes[0] - 1 {
                elements.push(Element {
                    nodes: [a, a + 1, 0],
                    vol: hx,
                    grad: [[-1.0 / hx, 0.0], [1.0 / hx, 0.0], [0.0, 0.0]],
                });
            }
        } else {
            let (hx, hy) = (h[0], h[1]);
            let nx = grid.nodes[0];
            let vol = 0.5 * hx * hy;
            for j in 0..grid.nodes[1] - 1 {
                for i in 0..nx - 1 {
                    let p00 = j * nx + i;
                    let p10 = p00 + 1;
                    let p01 = p00 + nx;
                    let p11 = p01 + 1;
                    elements.push(Element {
                        nodes: [p00, p10, p11],
                        vol,
                        grad: [[-1.0 / hx, 0.0], [1.0 / hx, -1.0 / hy], [0.0, 1.0 / hy]],
                    });
                    elements.push(Element {
                        nodes: [p00, p11, p01],
                        vol,
                        grad: [[0.0, -1.0 / hy], [1.0 / hx, 0.0], [-1.0 / hx, 1.0 / hy]],
                    });
                }
            }
        }
        let k = grid.dim() + 1;
        for e in &elements {
            for a in 0..k {
                lumped[e.nodes[a]] += e.vol / k as f64;
            }
        }
        Ok(Self {
            dim: grid.dim(),
            k,
            elements,
            lumped,
            node_count: n,
        })
    }

    /// `∇u` on element `e` as a row-major `m × dim` matrix.
    #[inline]
    pub fn grad_u(&self, e: &Element, u: &[f64], m: usize, out: &mut [f64]) {
        let d = self.dim;
        out[..m * d].iter_mut().for_each(|x| *x = 0.0);
        for a in 0..self.k {
            let node = e.nodes[a];
            for i in 0..m {
                let ua = u[node * m + i];
                for c in 0..d {
                    out[i * d + c] += ua * e.grad[a][c];
                }
            }
        }
    }

    #[inline]
    pub fn mean_v(&self, e: &Element, v: &[f64]) -> f64 {
        let mut s = 0.0;
        for a in 0..self.k {
            s += v[e.nodes[a]];
        }
        s / self.k as f64
    }

    #[inline]
    pub fn grad_v_sq(&self, e: &Element, v: &[f64]) -> f64 {
        let mut g = [0.0; 2];
        for a in 0..self.k {
            let va = v[e.nodes[a]];
            g[0] += va * e.grad[a][0];
            g[1] += va * e.grad[a][1];
        }
        g[0] * g[0] + g[1] * g[1]
    }

    #[inline]
    pub fn stiffness(&self, e: &Element, a: usize, b: usize) -> f64 {
        e.grad[a][0] * e.grad[b][0] + e.grad[a][1] * e.grad[b][1]
    }
}
