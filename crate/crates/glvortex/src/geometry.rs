//! Model manifolds with a distinguished codimension-2 minimal submanifold.
//!
//! `warped3` is `S^1(L0) x R^2` with `g = w(x, y) dx^2 + dy^2`,
//! `w = 1 + |y|^2 + eta cos(2 pi x / L0) y1^3 exp(-|y|^2)`, and `S = S^1 x {0}`.
//! The optional `eta` term vanishes to third order at `S`, so `S` stays a
//! geodesic with the same Jacobi operator while the reflection symmetry
//! `y1 -> -y1` is broken at finite vortex size. `flat3` has `w = 1`, `plane`
//! is `R^2` with `S` a point. For these metrics the normal planes are flat and
//! totally geodesic, so `(x, y)` are global Fermi coordinates.

use crate::error::{GlError, Result};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifoldKind {
    Plane,
    Warped3,
    Flat3,
}

/// A model manifold from the built-in family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelManifold {
    pub kind: ManifoldKind,
    /// Length of the base circle.
    #[serde(rename = "L0", default = "default_l0")]
    pub l0: f64,
    /// Amplitude of the symmetry-breaking warp term.
    #[serde(default)]
    pub perturbation: f64,
    /// Radius of validity of the Fermi expansion.
    #[serde(default = "default_tube")]
    pub fermi_radius: f64,
}

fn default_l0() -> f64 {
    2.0 * PI
}

fn default_tube() -> f64 {
    0.5
}

/// The warp factor and its derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Warp {
    pub w: f64,
    pub dx: f64,
    pub dy: [f64; 2],
    pub dyy: [[f64; 2]; 2],
}

impl ModelManifold {
    pub fn warped3(l0: f64) -> Self {
        Self { kind: ManifoldKind::Warped3, l0, perturbation: 0.0, fermi_radius: default_tube() }
    }

    pub fn flat3(l0: f64) -> Self {
        Self { kind: ManifoldKind::Flat3, l0, perturbation: 0.0, fermi_radius: default_tube() }
    }

    pub fn plane() -> Self {
        Self { kind: ManifoldKind::Plane, l0: 0.0, perturbation: 0.0, fermi_radius: default_tube() }
    }

    pub fn with_perturbation(mut self, eta: f64) -> Self {
        self.perturbation = eta;
        self
    }

    pub fn dimension(&self) -> usize {
        match self.kind {
            ManifoldKind::Plane => 2,
            _ => 3,
        }
    }

    /// Warp factor `g(d_x, d_x)` and its derivatives.
    pub fn warp(&self, x: f64, y: [f64; 2]) -> Warp {
        match self.kind {
            ManifoldKind::Warped3 => {
                let r2 = y[0] * y[0] + y[1] * y[1];
                let mut out = Warp {
                    w: 1.0 + r2,
                    dx: 0.0,
                    dy: [2.0 * y[0], 2.0 * y[1]],
                    dyy: [[2.0, 0.0], [0.0, 2.0]],
                };
                let eta = self.perturbation;
                if eta != 0.0 {
                    let k = 2.0 * PI / self.l0;
                    let (c, s) = ((k * x).cos(), (k * x).sin());
                    let e = (-r2).exp();
                    let y1 = y[0];
                    let p = y1 * y1 * y1 * e;
                    // partial derivatives of p = y1^3 exp(-|y|^2)
                    let p1 = (3.0 * y1 * y1 - 2.0 * y1.powi(4)) * e;
                    let p2 = -2.0 * y[1] * p;
                    let p11 = (6.0 * y1 - 8.0 * y1.powi(3) - 2.0 * y1 * (3.0 * y1 * y1 - 2.0 * y1.powi(4))) * e;
                    let p12 = -2.0 * y[1] * p1;
                    let p22 = (-2.0 + 4.0 * y[1] * y[1]) * p;
                    out.w += eta * c * p;
                    out.dx = -eta * k * s * p;
                    out.dy[0] += eta * c * p1;
                    out.dy[1] += eta * c * p2;
                    out.dyy[0][0] += eta * c * p11;
                    out.dyy[0][1] += eta * c * p12;
                    out.dyy[1][0] += eta * c * p12;
                    out.dyy[1][1] += eta * c * p22;
                }
                out
            }
            _ => Warp { w: 1.0, dx: 0.0, dy: [0.0; 2], dyy: [[0.0; 2]; 2] },
        }
    }

    /// Exact metric in Fermi coordinates `(x, y1, y2)` (diagonal).
    pub fn exact_metric(&self, x: f64, y: [f64; 2]) -> [f64; 3] {
        [self.warp(x, y).w, 1.0, 1.0]
    }
}

/// Second fundamental form, normal-bundle curvature and ambient curvature at one
/// point of `S`, in an orthonormal frame `e_i` (tangential, `k = n - 2` of them)
/// and `e_rho` (normal, two of them).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointGeometry {
    pub k: usize,
    /// `h_{ij,rho}` at index `(i * k + j) * 2 + rho`.
    pub h: Vec<f64>,
    /// `C_{ij}` (the `(1,2)` component of the normal curvature 2-form) at `i * k + j`.
    pub c: Vec<f64>,
    /// `R_{i rho sigma j}` at `((i * 2 + rho) * 2 + sigma) * k + j`.
    pub r_tnnt: Vec<f64>,
    /// `R_{i rho sigma beta}` at `((i * 2 + rho) * 2 + sigma) * 2 + beta`.
    pub r_tnnn: Vec<f64>,
    /// `R_{alpha rho sigma beta}` at `((alpha * 2 + rho) * 2 + sigma) * 2 + beta`.
    pub r_nnnn: Vec<f64>,
    /// Mean curvature vector `H_rho = sum_i h_{ii,rho}`.
    pub mean_curvature: [f64; 2],
}

impl PointGeometry {
    pub fn zero(k: usize) -> Self {
        Self {
            k,
            h: vec![0.0; k * k * 2],
            c: vec![0.0; k * k],
            r_tnnt: vec![0.0; k * 4 * k],
            r_tnnn: vec![0.0; k * 8],
            r_nnnn: vec![0.0; 16],
            mean_curvature: [0.0; 2],
        }
    }

    pub fn h_at(&self, i: usize, j: usize, rho: usize) -> f64 {
        self.h[(i * self.k + j) * 2 + rho]
    }

    pub fn r_tnnt_at(&self, i: usize, rho: usize, sigma: usize, j: usize) -> f64 {
        self.r_tnnt[((i * 2 + rho) * 2 + sigma) * self.k + j]
    }

    pub fn r_tnnn_at(&self, i: usize, rho: usize, sigma: usize, beta: usize) -> f64 {
        self.r_tnnn[((i * 2 + rho) * 2 + sigma) * 2 + beta]
    }

    pub fn r_nnnn_at(&self, a: usize, rho: usize, sigma: usize, b: usize) -> f64 {
        self.r_nnnn[((a * 2 + rho) * 2 + sigma) * 2 + b]
    }

    /// Zeroth-order coefficient of the Jacobi operator:
    /// `sum_ij h_{ij,rho} h_{ij,sigma} + sum_i R_{i rho sigma i}`.
    pub fn jacobi_potential(&self) -> [[f64; 2]; 2] {
        let mut out = [[0.0; 2]; 2];
        for (rho, row) in out.iter_mut().enumerate() {
            for (sigma, v) in row.iter_mut().enumerate() {
                let mut s = 0.0;
                for i in 0..self.k {
                    for j in 0..self.k {
                        s += self.h_at(i, j, rho) * self.h_at(i, j, sigma);
                    }
                    s += self.r_tnnt_at(i, rho, sigma, i);
                }
                *v = s;
            }
        }
        out
    }
}

/// Geometry data sampled along `S`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubmanifoldGeometry {
    pub xs: Vec<f64>,
    pub points: Vec<PointGeometry>,
}

impl SubmanifoldGeometry {
    pub fn max_mean_curvature(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.mean_curvature[0].abs().max(p.mean_curvature[1].abs()))
            .fold(0.0, f64::max)
    }
}

/// Geometry of `S` at the point with tangential coordinate `x`.
pub fn point_geometry(m: &ModelManifold, x: f64) -> PointGeometry {
    match m.kind {
        ManifoldKind::Plane => PointGeometry::zero(0),
        ManifoldKind::Flat3 => PointGeometry::zero(1),
        ManifoldKind::Warped3 => {
            let wp = m.warp(x, [0.0, 0.0]);
            let mut g = PointGeometry::zero(1);
            // in Fermi coordinates d_rho g_11 = 2 h_{11,rho}; with g_11(x,0) = 1
            for rho in 0..2 {
                g.h[rho] = 0.5 * wp.dy[rho];
            }
            // R(e_x, e_rho, e_sigma, e_x) for w dx^2 + dy^2, sectional-curvature sign
            for rho in 0..2 {
                for sigma in 0..2 {
                    let val = (-0.5 * wp.dyy[rho][sigma] + wp.dy[rho] * wp.dy[sigma] / (4.0 * wp.w)) / wp.w;
                    g.r_tnnt[rho * 2 + sigma] = val;
                }
            }
            g.mean_curvature = [g.h[0], g.h[1]];
            g
        }
    }
}

/// Samples the submanifold data at `n_samples` equally spaced points of `S`.
pub fn submanifold_data(m: &ModelManifold, n_samples: usize) -> SubmanifoldGeometry {
    let n = n_samples.max(1);
    let xs: Vec<f64> = (0..n).map(|i| i as f64 * m.l0 / n as f64).collect();
    let points = xs.iter().map(|&x| point_geometry(m, x)).collect();
    SubmanifoldGeometry { xs, points }
}

/// Metric components in Fermi coordinates to second order in `y`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricExpansion {
    /// `g(e_i, e_j)`, row-major `k x k`.
    pub g_tt: Vec<f64>,
    /// `g(e_i, e_alpha)`, row-major `k x 2`.
    pub g_tn: Vec<f64>,
    pub g_nn: [[f64; 2]; 2],
    /// `(det g / det g0)^{1/2}` of the expansion.
    pub volume_ratio: f64,
}

/// Second-order Fermi expansion of the metric from the data of `S`.
pub fn expansion_from_geometry(pg: &PointGeometry, y: [f64; 2]) -> MetricExpansion {
    let k = pg.k;
    let mut g_tt = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let mut v = if i == j { 1.0 } else { 0.0 };
            for rho in 0..2 {
                v += 2.0 * pg.h_at(i, j, rho) * y[rho];
                for sigma in 0..2 {
                    let mut hh = 0.0;
                    for l in 0..k {
                        hh += pg.h_at(i, l, rho) * pg.h_at(j, l, sigma);
                    }
                    v += (hh - pg.r_tnnt_at(i, rho, sigma, j)) * y[rho] * y[sigma];
                }
            }
            g_tt[i * k + j] = v;
        }
    }
    let mut g_tn = vec![0.0; k * 2];
    for i in 0..k {
        for a in 0..2 {
            let mut v = 0.0;
            for rho in 0..2 {
                for sigma in 0..2 {
                    v -= 2.0 / 3.0 * pg.r_tnnn_at(i, rho, sigma, a) * y[rho] * y[sigma];
                }
            }
            g_tn[i * 2 + a] = v;
        }
    }
    let mut g_nn = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let mut v = if a == b { 1.0 } else { 0.0 };
            for rho in 0..2 {
                for sigma in 0..2 {
                    v -= pg.r_nnnn_at(a, rho, sigma, b) * y[rho] * y[sigma] / 3.0;
                }
            }
            g_nn[a][b] = v;
        }
    }
    let full = DMatrix::from_fn(k + 2, k + 2, |r, c| match (r < k, c < k) {
        (true, true) => g_tt[r * k + c],
        (true, false) => g_tn[r * 2 + (c - k)],
        (false, true) => g_tn[c * 2 + (r - k)],
        (false, false) => g_nn[r - k][c - k],
    });
    let volume_ratio = full.determinant().max(0.0).sqrt();
    MetricExpansion { g_tt, g_tn, g_nn, volume_ratio }
}

/// Second-order Fermi expansion of the metric of `m` at `(x, y)`.
pub fn fermi_metric_expansion(m: &ModelManifold, x: f64, y: [f64; 2]) -> Result<MetricExpansion> {
    let r = (y[0] * y[0] + y[1] * y[1]).sqrt();
    if r > m.fermi_radius {
        return Err(GlError::OutsideTube { radius: r, tube: m.fermi_radius });
    }
    Ok(expansion_from_geometry(&point_geometry(m, x), y))
}

/// Discretized Jacobi operator `J v = v'' + P v` on a periodic grid along `S`,
/// acting on the two normal components (index `2 * node + rho`).
#[derive(Debug, Clone)]
pub struct JacobiOperatorMatrix {
    pub matrix: DMatrix<f64>,
    pub nodes: usize,
    pub spacing: f64,
    /// Eigenvalues in ascending order.
    pub eigenvalues: Vec<f64>,
    pub smallest_singular_value: f64,
}

impl JacobiOperatorMatrix {
    /// `J v` for `v` stored as `[v_rho(x_0), ...]` with layout `2 * node + rho`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let x = nalgebra::DVector::from_column_slice(v);
        (&self.matrix * x).as_slice().to_vec()
    }
}

/// Assembles the Jacobi operator without the nondegeneracy check.
pub fn assemble_jacobi(m: &ModelManifold, nodes: usize) -> JacobiOperatorMatrix {
    let (matrix, spacing, nodes) = match m.kind {
        ManifoldKind::Plane => (DMatrix::zeros(2, 2), 0.0, 1),
        _ => {
            let n = nodes.max(3);
            let dx = m.l0 / n as f64;
            let mut a = DMatrix::zeros(2 * n, 2 * n);
            for i in 0..n {
                let p = point_geometry(m, i as f64 * dx).jacobi_potential();
                let ip = (i + 1) % n;
                let im = (i + n - 1) % n;
                for rho in 0..2 {
                    let r = 2 * i + rho;
                    a[(r, r)] += -2.0 / (dx * dx);
                    a[(r, 2 * ip + rho)] += 1.0 / (dx * dx);
                    a[(r, 2 * im + rho)] += 1.0 / (dx * dx);
                    for sigma in 0..2 {
                        a[(r, 2 * i + sigma)] += p[rho][sigma];
                    }
                }
            }
            (a, dx, n)
        }
    };
    let sym: DMatrix<f64> = (&matrix + matrix.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let smallest_singular_value = eigenvalues.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    JacobiOperatorMatrix { matrix, nodes, spacing, eigenvalues, smallest_singular_value }
}

/// Jacobi operator with the nondegeneracy certificate; `Degenerate` if the
/// smallest singular value is below `1e-8`.
pub fn jacobi_operator(m: &ModelManifold, nodes: usize) -> Result<JacobiOperatorMatrix> {
    let j = assemble_jacobi(m, nodes);
    if j.smallest_singular_value < 1e-8 {
        return Err(GlError::Degenerate { sigma: j.smallest_singular_value });
    }
    Ok(j)
}

/// Discrete eigenvalues of `-J` for warped3 Fourier mode `k` on `n` nodes.
pub fn warped3_discrete_mode(l0: f64, n: usize, k: usize) -> f64 {
    let dx = l0 / n as f64;
    let kk = 2.0 * PI * k as f64 / l0;
    let s = 2.0 * (kk * dx / 2.0).sin() / dx;
    s * s + 1.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat3_jacobi_is_degenerate() {
        let err = jacobi_operator(&ModelManifold::flat3(2.0 * PI), 64).unwrap_err();
        assert!(matches!(err, GlError::Degenerate { .. }));
    }

    #[test]
    fn warped3_potential_is_minus_identity() {
        let p = point_geometry(&ModelManifold::warped3(2.0 * PI), 0.3).jacobi_potential();
        assert_eq!(p, [[-1.0, 0.0], [0.0, -1.0]]);
    }
}
