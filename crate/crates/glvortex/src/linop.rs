//! The gauge-fixed linearized operator `L + T T*` around the planar vortex.
//!
//! Perturbations `(a, f)` live on the interior nodes of `[-R, R]^2` with
//! homogeneous Dirichlet data. The operator is assembled as `W^{-1} D^T M D`,
//! where `D` maps a pair to the four first-order quantities
//!
//! ```text
//! G = eps div a - Im(conj(psi) f) / eps            (gauge condition, = -T* (a, f))
//! X = eps curl a + Re(conj(psi) f) / eps           (linearized curvature equation)
//! P = D_1 f + i D_2 f - i (a_1 + i a_2) psi        (linearized d-bar equation)
//! ```
//!
//! and `W` is the weight of the inner product `int eps^2 <a, a> + <f, f>`. The
//! derivatives in `D` average the four one-sided second-order variants, which
//! keeps the quadratic form free of grid-scale null modes.

use crate::error::{GlError, Result};
use crate::par;
use crate::vortex2d::{FieldSample, VortexProfile};
use linfa_linalg::lobpcg::{lobpcg, Order};
use linfa_linalg::LinalgError;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustdct::{Dst1, DctPlanner};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Number of real unknowns per node: `a_1, a_2, Re f, Im f`.
pub const COMPONENTS: usize = 4;

/// Interior nodes of the square `[-R, R]^2` with spacing `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2d {
    #[serde(rename = "R")]
    pub r: f64,
    pub h: f64,
    #[serde(skip)]
    pub m: usize,
}

impl Grid2d {
    pub fn new(r: f64, h: f64) -> Self {
        let m = ((2.0 * r / h).round() as usize).saturating_sub(1);
        Self { r, h, m }
    }

    pub fn nodes(&self) -> usize {
        self.m * self.m
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.r + (i + 1) as f64 * self.h
    }

    pub fn point(&self, node: usize) -> [f64; 2] {
        [self.coord(node / self.m), self.coord(node % self.m)]
    }
}

/// A perturbation `(a, f)` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugePair {
    pub a: Vec<[f64; 2]>,
    pub f: Vec<Complex64>,
    pub grid: Grid2d,
    pub epsilon: f64,
}

impl GaugePair {
    pub fn zeros(grid: Grid2d, epsilon: f64) -> Self {
        Self { a: vec![[0.0; 2]; grid.nodes()], f: vec![Complex64::new(0.0, 0.0); grid.nodes()], grid, epsilon }
    }

    pub fn from_vec(x: &[f64], grid: Grid2d, epsilon: f64) -> Self {
        let n = grid.nodes();
        assert_eq!(x.len(), COMPONENTS * n);
        let a = (0..n).map(|k| [x[4 * k], x[4 * k + 1]]).collect();
        let f = (0..n).map(|k| Complex64::new(x[4 * k + 2], x[4 * k + 3])).collect();
        Self { a, f, grid, epsilon }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(COMPONENTS * self.a.len());
        for (a, f) in self.a.iter().zip(&self.f) {
            x.extend_from_slice(&[a[0], a[1], f.re, f.im]);
        }
        x
    }

    /// Composite norm `eps ||a|| + ||f||` with `L^2` quadrature.
    pub fn norm(&self) -> f64 {
        let h2 = self.grid.h * self.grid.h;
        let na: f64 = self.a.iter().map(|a| a[0] * a[0] + a[1] * a[1]).sum::<f64>() * h2;
        let nf: f64 = self.f.iter().map(|f| f.norm_sqr()).sum::<f64>() * h2;
        self.epsilon * na.sqrt() + nf.sqrt()
    }

    /// Largest pointwise magnitude on the two outermost rings of nodes.
    pub fn boundary_max(&self) -> f64 {
        let m = self.grid.m;
        let mut out = 0.0f64;
        for node in 0..self.a.len() {
            let (i, j) = (node / m, node % m);
            if i < 2 || j < 2 || i + 2 >= m || j + 2 >= m {
                let v = (self.a[node][0].powi(2) + self.a[node][1].powi(2)).sqrt().max(self.f[node].norm());
                out = out.max(v);
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.a
            .iter()
            .zip(&self.f)
            .map(|(a, f)| (a[0] * a[0] + a[1] * a[1]).sqrt().max(f.norm()))
            .fold(0.0, f64::max)
    }
}

/// Vortex fields on the grid nodes.
#[derive(Debug, Clone)]
pub struct Background {
    pub samples: Vec<FieldSample>,
}

impl Background {
    /// Samples the profile at every node. Points beyond the profile's radius get
    /// the asymptotic values `|psi| = 1`, `A = d theta`.
    pub fn from_profile(profile: &VortexProfile, grid: &Grid2d) -> Self {
        let samples = par::map_range(grid.nodes(), |k| {
            let y = grid.point(k);
            profile.sample(y).unwrap_or_else(|| far_field(y))
        });
        Self { samples }
    }
}

fn far_field(y: [f64; 2]) -> FieldSample {
    let r2 = y[0] * y[0] + y[1] * y[1];
    let r = r2.sqrt();
    FieldSample {
        psi: Complex64::new(y[0] / r, y[1] / r),
        curvature: 0.0,
        dpsi: [Complex64::new(0.0, 0.0); 2],
        connection: [-y[1] / r2, y[0] / r2],
    }
}

/// `L + T T* + xi^2` on a grid, applied matrix-free.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub grid: Grid2d,
    pub epsilon: f64,
    pub xi_sq: f64,
    background: Arc<Background>,
}

const VARIANTS: [(i64, i64); 4] = [(1, 1), (1, -1), (-1, 1), (-1, -1)];

impl DiscreteOperator {
    pub fn dimension(&self) -> usize {
        COMPONENTS * self.grid.nodes()
    }

    pub fn background(&self) -> &Background {
        &self.background
    }

    /// Weight of component `c` in the inner product (`eps^2 h^2` for `a`, `h^2` for `f`).
    pub fn weight(&self, c: usize) -> f64 {
        let h2 = self.grid.h * self.grid.h;
        if c < 2 {
            self.epsilon * self.epsilon * h2
        } else {
            h2
        }
    }

    /// `<x, y>` in the weighted inner product.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        let wa = self.weight(0);
        let wf = self.weight(2);
        par::sum_range(x.len() / 4, |k| {
            let b = 4 * k;
            wa * (x[b] * y[b] + x[b + 1] * y[b + 1]) + wf * (x[b + 2] * y[b + 2] + x[b + 3] * y[b + 3])
        })
    }

    pub fn norm(&self, x: &[f64]) -> f64 {
        self.inner(x, x).sqrt()
    }

    /// The quadratic form `<L x, x>` (including the `xi^2` shift).
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let lx = self.apply(x);
        self.inner(&lx, x)
    }

    /// The four first-order quantities `(G, X, Re P, Im P)` for one stencil variant.
    fn rows(&self, x: &[f64], s: (i64, i64)) -> Vec<f64> {
        let m = self.grid.m;
        let h = self.grid.h;
        let eps = self.epsilon;
        let mut out = vec![0.0; 4 * m * m];
        let bg = &self.background.samples;
        par::for_each_chunk_mut(&mut out, 4 * m, |i, row| {
            let get = |ii: i64, jj: i64, c: usize| -> f64 {
                if ii < 0 || jj < 0 || ii >= m as i64 || jj >= m as i64 {
                    0.0
                } else {
                    x[4 * (ii as usize * m + jj as usize) + c]
                }
            };
            let ii = i as i64;
            for j in 0..m {
                let jj = j as i64;
                let d = |c: usize, axis: usize| -> f64 {
                    let (di, dj, sg) = if axis == 0 { (s.0, 0, s.0) } else { (0, s.1, s.1) };
                    let u0 = get(ii, jj, c);
                    let u1 = get(ii + di, jj + dj, c);
                    let u2 = get(ii + 2 * di, jj + 2 * dj, c);
                    sg as f64 * (-3.0 * u0 + 4.0 * u1 - u2) / (2.0 * h)
                };
                let node = i * m + j;
                let b = &bg[node];
                let a1 = x[4 * node];
                let a2 = x[4 * node + 1];
                let f = Complex64::new(x[4 * node + 2], x[4 * node + 3]);
                let d1f = Complex64::new(d(2, 0), d(3, 0));
                let d2f = Complex64::new(d(2, 1), d(3, 1));
                let pf = b.psi.conj() * f;
                let g = eps * (d(0, 0) + d(1, 1)) - pf.im / eps;
                let xr = eps * (d(1, 0) - d(0, 1)) + pf.re / eps;
                let i1 = Complex64::new(0.0, 1.0);
                let p = d1f + i1 * d2f + Complex64::new(b.connection[1], -b.connection[0]) * f
                    - i1 * Complex64::new(a1, a2) * b.psi;
                row[4 * j..4 * j + 4].copy_from_slice(&[g, xr, p.re, p.im]);
            }
        });
        out
    }

    /// Accumulates `D_s^T rows` into `out` (unweighted).
    fn add_transpose(&self, rows: &[f64], s: (i64, i64), out: &mut [f64]) {
        let m = self.grid.m;
        let h = self.grid.h;
        let eps = self.epsilon;
        let bg = &self.background.samples;
        par::for_each_chunk_mut(out, 4 * m, |i, orow| {
            let get = |ii: i64, jj: i64, r: usize| -> f64 {
                if ii < 0 || jj < 0 || ii >= m as i64 || jj >= m as i64 {
                    0.0
                } else {
                    rows[4 * (ii as usize * m + jj as usize) + r]
                }
            };
            let ii = i as i64;
            for j in 0..m {
                let jj = j as i64;
                let dt = |r: usize, axis: usize| -> f64 {
                    let (di, dj, sg) = if axis == 0 { (s.0, 0, s.0) } else { (0, s.1, s.1) };
                    let r0 = get(ii, jj, r);
                    let r1 = get(ii - di, jj - dj, r);
                    let r2 = get(ii - 2 * di, jj - 2 * dj, r);
                    sg as f64 * (-3.0 * r0 + 4.0 * r1 - r2) / (2.0 * h)
                };
                let node = i * m + j;
                let b = &bg[node];
                let g = rows[4 * node];
                let xr = rows[4 * node + 1];
                let p = Complex64::new(rows[4 * node + 2], rows[4 * node + 3]);
                let i1 = Complex64::new(0.0, 1.0);
                let pbar_psi = p.conj() * b.psi;
                let oa1 = eps * dt(0, 0) - eps * dt(1, 1) + pbar_psi.im;
                let oa2 = eps * dt(0, 1) + eps * dt(1, 0) + pbar_psi.re;
                let d1p = Complex64::new(dt(2, 0), dt(3, 0));
                let d2p = Complex64::new(dt(2, 1), dt(3, 1));
                let of = -i1 * b.psi * (g / eps)
                    + b.psi * (xr / eps)
                    + d1p
                    - i1 * d2p
                    + Complex64::new(b.connection[1], b.connection[0]) * p;
                let o = &mut orow[4 * j..4 * j + 4];
                o[0] += oa1;
                o[1] += oa2;
                o[2] += of.re;
                o[3] += of.im;
            }
        });
    }

    /// `y = L x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for s in VARIANTS {
            let rows = self.rows(x, s);
            self.add_transpose(&rows, s, &mut out);
        }
        let ca = 0.25 / (self.epsilon * self.epsilon);
        let xi = self.xi_sq;
        par::for_each_chunk_mut(&mut out, 4, |k, o| {
            o[0] = ca * o[0] + xi * x[4 * k];
            o[1] = ca * o[1] + xi * x[4 * k + 1];
            o[2] = 0.25 * o[2] + xi * x[4 * k + 2];
            o[3] = 0.25 * o[3] + xi * x[4 * k + 3];
        });
        out
    }

    /// `T* (a, f)`: minus the averaged gauge quantity `G`, one value per node.
    pub fn t_star(&self, x: &[f64]) -> Vec<f64> {
        let n = self.grid.nodes();
        let mut out = vec![0.0; n];
        for s in VARIANTS {
            let rows = self.rows(x, s);
            for k in 0..n {
                out[k] -= 0.25 * rows[4 * k];
            }
        }
        out
    }

    /// `T u` for a real gauge function `u` (the infinitesimal gauge direction),
    /// the exact adjoint of [`Self::t_star`] with `L^2` quadrature on `u`.
    pub fn t_apply(&self, u: &[f64]) -> Vec<f64> {
        let n = self.grid.nodes();
        let mut out = vec![0.0; 4 * n];
        for s in VARIANTS {
            let mut rows = vec![0.0; 4 * n];
            for k in 0..n {
                rows[4 * k] = -0.25 * u[k];
            }
            self.add_transpose(&rows, s, &mut out);
        }
        let ca = 1.0 / (self.epsilon * self.epsilon);
        for k in 0..n {
            out[4 * k] *= ca;
            out[4 * k + 1] *= ca;
        }
        out
    }

    /// Same operator with a different `|xi|^2` shift.
    pub fn with_shift(&self, xi_sq: f64) -> Self {
        Self { xi_sq, ..self.clone() }
    }
}

fn check_grid(profile: &VortexProfile, grid: &Grid2d) -> Result<()> {
    let eps = profile.epsilon;
    if grid.h > eps / 8.0 {
        return Err(GlError::GridTooCoarse { spacing: grid.h, limit: eps / 8.0 });
    }
    if grid.r < 10.0 * eps {
        return Err(GlError::Config {
            path: "grid.R".into(),
            message: format!("R = {} is below 10 eps = {}", grid.r, 10.0 * eps),
        });
    }
    Ok(())
}

/// Assembles `L + T T*` around `profile` on `grid`.
pub fn assemble_gauge_fixed_operator_2d(profile: &VortexProfile, grid: Grid2d) -> Result<DiscreteOperator> {
    check_grid(profile, &grid)?;
    Ok(DiscreteOperator {
        grid,
        epsilon: profile.epsilon,
        xi_sq: 0.0,
        background: Arc::new(Background::from_profile(profile, &grid)),
    })
}

/// Fourier-mode model operator `L + T T* + |xi|^2`.
pub fn assemble_model_mode_operator(profile: &VortexProfile, grid: Grid2d, xi_norm_sq: f64) -> Result<DiscreteOperator> {
    if !(xi_norm_sq >= 0.0) {
        return Err(GlError::Config { path: "xi_norm_sq".into(), message: "must be nonnegative".into() });
    }
    Ok(assemble_gauge_fixed_operator_2d(profile, grid)?.with_shift(xi_norm_sq))
}

/// The translation mode `(i_w F, D_w psi)` of the vortex for direction `w`.
pub fn kernel_pair(op: &DiscreteOperator, w: [f64; 2]) -> GaugePair {
    let bg = &op.background.samples;
    let a = bg.iter().map(|b| [-b.curvature * w[1], b.curvature * w[0]]).collect();
    let f = bg.iter().map(|b| b.dpsi[0] * w[0] + b.dpsi[1] * w[1]).collect();
    GaugePair { a, f, grid: op.grid, epsilon: op.epsilon }
}

/// Result of the sum-of-squares check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadraticFormReport {
    pub total: f64,
    pub square1: f64,
    pub square2: f64,
}

impl QuadraticFormReport {
    pub fn relative_defect(&self) -> f64 {
        (self.total - 4.0 * self.square1 - 2.0 * self.square2).abs() / self.total.abs().max(f64::MIN_POSITIVE)
    }
}

/// Spectral derivatives on the periodic extension of the grid (period `2R`,
/// the boundary node carrying zero).
struct SpectralGrid {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    k: Vec<f64>,
}

impl SpectralGrid {
    fn new(grid: &Grid2d) -> Self {
        let n = grid.m + 1;
        let mut planner = FftPlanner::new();
        let period = 2.0 * grid.r;
        let k = (0..n)
            .map(|j| {
                let jj = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
                if n % 2 == 0 && j == n / 2 {
                    0.0
                } else {
                    2.0 * std::f64::consts::PI * jj / period
                }
            })
            .collect();
        Self { n, fft: planner.plan_fft_forward(n), ifft: planner.plan_fft_inverse(n), k }
    }

    /// Embeds node values into the periodic `n x n` array (index 0 is the boundary).
    fn embed(&self, m: usize, vals: impl Fn(usize) -> Complex64) -> Vec<Complex64> {
        let n = self.n;
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..m {
            for j in 0..m {
                out[(i + 1) * n + j + 1] = vals(i * m + j);
            }
        }
        out
    }

    fn transform_axis(&self, data: &mut [Complex64], axis: usize, forward: bool) {
        let n = self.n;
        let plan = if forward { &self.fft } else { &self.ifft };
        if axis == 1 {
            for row in data.chunks_mut(n) {
                plan.process(row);
            }
        } else {
            let mut col = vec![Complex64::new(0.0, 0.0); n];
            for j in 0..n {
                for i in 0..n {
                    col[i] = data[i * n + j];
                }
                plan.process(&mut col);
                for i in 0..n {
                    data[i * n + j] = col[i];
                }
            }
        }
    }

    /// Derivative of a complex field along `axis` (0 is `y_1`).
    fn derivative(&self, data: &[Complex64], axis: usize) -> Vec<Complex64> {
        let n = self.n;
        let mut w = data.to_vec();
        self.transform_axis(&mut w, axis, true);
        for i in 0..n {
            for j in 0..n {
                let kk = if axis == 0 { self.k[i] } else { self.k[j] };
                w[i * n + j] *= Complex64::new(0.0, kk / n as f64);
            }
        }
        self.transform_axis(&mut w, axis, false);
        w
    }
}

/// Evaluates both sides of the sum-of-squares identity independently with
/// spectral derivatives: `total` is the expanded second-order form
/// `int eps^2 |grad a|^2 + |psi|^2 |a|^2 + |D f|^2 + (|psi|^2 / eps^2 - F) |f|^2 + cross terms`,
/// `square1 = int |eps d alpha + i conj(psi) f / (2 eps)|^2` and
/// `square2 = int |dbar f + psi alpha / 2|^2` with the `(0,1)`-form norm.
pub fn quadratic_form_decomposition(op: &DiscreteOperator, pair: &GaugePair) -> Result<QuadraticFormReport> {
    let scale = pair.max_abs();
    let leak = pair.boundary_max();
    if leak > 1e-8 * scale.max(f64::MIN_POSITIVE) {
        return Err(GlError::BoundaryLeak { magnitude: leak });
    }
    let m = op.grid.m;
    let sg = SpectralGrid::new(&op.grid);
    let alpha = sg.embed(m, |k| Complex64::new(pair.a[k][0], pair.a[k][1]));
    let f = sg.embed(m, |k| pair.f[k]);
    let da = [sg.derivative(&alpha, 0), sg.derivative(&alpha, 1)];
    let df = [sg.derivative(&f, 0), sg.derivative(&f, 1)];
    let eps = op.epsilon;
    let h2 = op.grid.h * op.grid.h;
    let n = sg.n;
    let i1 = Complex64::new(0.0, 1.0);
    let bg = &op.background.samples;
    let (mut total, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for i in 0..m {
        for j in 0..m {
            let node = i * m + j;
            let p = (i + 1) * n + j + 1;
            let b = &bg[node];
            let (a1, a2) = (pair.a[node][0], pair.a[node][1]);
            let fv = pair.f[node];
            // d_k a_1 = Re d_k alpha, d_k a_2 = Im d_k alpha
            let (d1a1, d1a2) = (da[0][p].re, da[0][p].im);
            let (d2a1, d2a2) = (da[1][p].re, da[1][p].im);
            let dfc = [df[0][p] - i1 * b.connection[0] * fv, df[1][p] - i1 * b.connection[1] * fv];
            let psi2 = b.psi.norm_sqr();

            let grad_a = d1a1 * d1a1 + d1a2 * d1a2 + d2a1 * d2a1 + d2a2 * d2a2;
            let mut t = eps * eps * grad_a + psi2 * (a1 * a1 + a2 * a2);
            t += dfc[0].norm_sqr() + dfc[1].norm_sqr();
            t += (psi2 / (eps * eps) - b.curvature) * fv.norm_sqr();
            let c1 = (b.dpsi[0].conj() * fv).im * a1 + (b.dpsi[1].conj() * fv).im * a2;
            let c2 = a1 * (b.dpsi[1].conj() * fv).re - a2 * (b.dpsi[0].conj() * fv).re;
            t += 2.0 * c1 + 2.0 * c2;
            total += t;

            let pf = b.psi.conj() * fv;
            // eps d alpha + i conj(psi) f / (2 eps), d = (d_1 - i d_2) / 2
            let q1 = eps * 0.5 * Complex64::new(d1a1 + d2a2, d1a2 - d2a1) + i1 * pf / (2.0 * eps);
            s1 += q1.norm_sqr();
            // dbar f + psi alpha / 2 in the convention D = d - iA: (D_1 f + i D_2 f)/2 - (i/2) alpha psi
            let q2 = 0.5 * (dfc[0] + i1 * dfc[1]) - 0.5 * i1 * Complex64::new(a1, a2) * b.psi;
            s2 += 2.0 * q2.norm_sqr();
        }
    }
    Ok(QuadraticFormReport { total: total * h2, square1: s1 * h2, square2: s2 * h2 })
}

/// Fast solver for `(-Lap_h + c) u = r` with Dirichlet data on the interior grid.
pub struct DirichletPoisson {
    m: usize,
    plan: Arc<dyn Dst1<f64>>,
    lap: Vec<f64>,
}

impl DirichletPoisson {
    pub fn new(grid: &Grid2d) -> Self {
        let m = grid.m;
        let plan = DctPlanner::new().plan_dst1(m);
        let h = grid.h;
        let lap = (1..=m)
            .map(|p| {
                let s = (p as f64 * std::f64::consts::PI / (2.0 * (m + 1) as f64)).sin();
                4.0 * s * s / (h * h)
            })
            .collect();
        Self { m, plan, lap }
    }

    fn dst2d(&self, data: &mut [f64]) {
        let m = self.m;
        par::for_each_chunk_mut(data, m, |_, row| self.plan.process_dst1(row));
        let mut t = vec![0.0; m * m];
        transpose(data, &mut t, m);
        par::for_each_chunk_mut(&mut t, m, |_, row| self.plan.process_dst1(row));
        transpose(&t, data, m);
    }

    /// Solves in place; `data` is row-major `m x m`.
    pub fn solve(&self, data: &mut [f64], shift: f64) {
        let m = self.m;
        self.dst2d(data);
        let norm = (2.0 / (m + 1) as f64).powi(2);
        par::for_each_chunk_mut(data, m, |i, row| {
            for (j, v) in row.iter_mut().enumerate() {
                *v *= norm / (self.lap[i] + self.lap[j] + shift);
            }
        });
        self.dst2d(data);
    }
}

fn transpose(src: &[f64], dst: &mut [f64], m: usize) {
    par::for_each_chunk_mut(dst, m, |i, row| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = src[j * m + i];
        }
    });
}

/// The operator in `W^{1/2}`-scaled coordinates, where the weighted inner
/// product becomes the Euclidean one.
struct ScaledProblem<'a> {
    op: &'a DiscreteOperator,
    sqrt_w: [f64; 2],
    poisson: DirichletPoisson,
    squared: bool,
}

impl<'a> ScaledProblem<'a> {
    fn new(op: &'a DiscreteOperator, squared: bool) -> Self {
        Self { op, sqrt_w: [op.weight(0).sqrt(), op.weight(2).sqrt()], poisson: DirichletPoisson::new(&op.grid), squared }
    }

    fn to_scaled(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(i, v)| v * self.sqrt_w[(i % 4) / 2]).collect()
    }

    fn from_scaled(&self, y: &[f64]) -> Vec<f64> {
        y.iter().enumerate().map(|(i, v)| v / self.sqrt_w[(i % 4) / 2]).collect()
    }

    fn apply(&self, y: &[f64]) -> Vec<f64> {
        let x = self.from_scaled(y);
        let mut lx = self.op.apply(&x);
        if self.squared {
            lx = self.op.apply(&lx);
        }
        self.to_scaled(&lx)
    }

    fn precondition(&self, y: &mut [f64]) {
        let n = self.op.grid.nodes();
        let shift = 1.0 / (self.op.epsilon * self.op.epsilon) + self.op.xi_sq;
        let passes = if self.squared { 2 } else { 1 };
        for c in 0..COMPONENTS {
            let mut buf: Vec<f64> = (0..n).map(|k| y[4 * k + c]).collect();
            for _ in 0..passes {
                self.poisson.solve(&mut buf, shift);
            }
            for k in 0..n {
                y[4 * k + c] = buf[k];
            }
        }
    }
}

/// Lowest eigenpairs found by the block eigensolver.
#[derive(Debug, Clone)]
pub struct Eigenpairs {
    pub values: Vec<f64>,
    /// Eigenvectors in the original coordinates, unit in the weighted norm.
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
}

/// Options for [`lowest_eigenpairs`].
#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    pub wanted: usize,
    pub block: usize,
    pub tol: f32,
    pub maxiter: usize,
    pub seed: u64,
    /// Work with the square of the operator.
    pub squared: bool,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { wanted: 3, block: 5, tol: 1e-5, maxiter: 600, seed: 7, squared: false }
    }
}

/// Lowest eigenpairs of the (optionally squared) operator, restricted to the
/// weighted orthogonal complement of `constraints`.
pub fn lowest_eigenpairs(op: &DiscreteOperator, opts: EigenOptions, constraints: &[Vec<f64>]) -> Result<Eigenpairs> {
    lowest_eigenpairs_from(op, opts, constraints, &[])
}

/// As [`lowest_eigenpairs`], seeding the block with `initial` (the remaining
/// columns are random).
pub fn lowest_eigenpairs_from(
    op: &DiscreteOperator,
    opts: EigenOptions,
    constraints: &[Vec<f64>],
    initial: &[Vec<f64>],
) -> Result<Eigenpairs> {
    let sp = ScaledProblem::new(op, opts.squared);
    let n = op.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x0 = Array2::from_shape_fn((n, opts.block), |_| rng.gen::<f64>() - 0.5);
    for (c, v) in initial.iter().take(opts.block).enumerate() {
        x0.column_mut(c).assign(&ndarray::Array1::from(sp.to_scaled(v)));
    }
    let y = if constraints.is_empty() {
        None
    } else {
        let mut y = Array2::zeros((n, constraints.len()));
        for (c, v) in constraints.iter().enumerate() {
            let s = sp.to_scaled(v);
            y.column_mut(c).assign(&ndarray::Array1::from(s));
        }
        Some(y)
    };
    let apply = |x: ArrayView2<f64>| -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        for (c, col) in x.axis_iter(Axis(1)).enumerate() {
            let v: Vec<f64> = col.to_vec();
            out.column_mut(c).assign(&ndarray::Array1::from(sp.apply(&v)));
        }
        out
    };
    let precond = |mut r: ArrayViewMut2<f64>| {
        for mut col in r.axis_iter_mut(Axis(1)) {
            let mut v: Vec<f64> = col.to_vec();
            sp.precondition(&mut v);
            col.assign(&ndarray::Array1::from(v));
        }
    };
    let res = lobpcg(apply, x0, precond, y.as_ref().map(|y| y.view()), opts.tol, opts.maxiter, Order::Smallest);
    let result = match res {
        Ok(r) => r,
        Err((_, Some(r))) if r.rnorm.iter().take(opts.wanted).all(|v| *v < 1e3 * opts.tol as f64) => r,
        Err((e, best)) => {
            let reason = match (&e, &best) {
                (LinalgError::NotThin { .. }, _) => "block wider than the problem".to_string(),
                (_, Some(b)) => format!("{e}; residuals {:?}", b.rnorm),
                _ => format!("{e}"),
            };
            return Err(GlError::EigsolverFailure { iterations: opts.maxiter, reason });
        }
    };
    let wanted = opts.wanted.min(result.eigvals.len());
    let values = result.eigvals.iter().take(wanted).copied().collect();
    let vectors = (0..wanted).map(|c| sp.from_scaled(&result.eigvecs.column(c).to_vec())).collect();
    let residuals = result.rnorm.iter().take(wanted).copied().collect();
    Ok(Eigenpairs { values, vectors, residuals })
}

/// Two lowest eigenpairs and the next eigenvalue.
#[derive(Debug, Clone)]
pub struct KernelBasis {
    pub vectors: [GaugePair; 2],
    pub eigenvalues: [f64; 2],
    pub residuals: [f64; 2],
    pub gap: f64,
}

pub fn kernel_basis(op: &DiscreteOperator) -> Result<KernelBasis> {
    let ep = lowest_eigenpairs(op, EigenOptions::default(), &[])?;
    if ep.values.len() < 3 {
        return Err(GlError::EigsolverFailure { iterations: 0, reason: "fewer than three eigenpairs".into() });
    }
    let g = |k: usize| GaugePair::from_vec(&ep.vectors[k], op.grid, op.epsilon);
    Ok(KernelBasis {
        vectors: [g(0), g(1)],
        eigenvalues: [ep.values[0], ep.values[1]],
        residuals: [ep.residuals[0], ep.residuals[1]],
        gap: ep.values[2],
    })
}

/// Cosines of the principal angles between two subspaces in the weighted
/// inner product, in descending order.
pub fn principal_cosines(op: &DiscreteOperator, u: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<f64> {
    let qu = orthonormalize(op, u);
    let qv = orthonormalize(op, v);
    let m = nalgebra::DMatrix::from_fn(qu.len(), qv.len(), |i, j| op.inner(&qu[i], &qv[j]));
    let mut s: Vec<f64> = m.singular_values().iter().map(|v| v.min(1.0)).collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// Gram-Schmidt in the weighted inner product (applied twice).
pub fn orthonormalize(op: &DiscreteOperator, vs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in vs {
        let mut w = v.clone();
        for _ in 0..2 {
            for q in &out {
                let c = op.inner(q, &w);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= c * qi;
                }
            }
        }
        let nrm = op.norm(&w);
        if nrm > 0.0 {
            w.iter_mut().for_each(|x| *x /= nrm);
            out.push(w);
        }
    }
    out
}

/// Spectrum report as written by the `kernel` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub epsilon: f64,
    pub grid: Grid2d,
    pub eigenvalues: Vec<f64>,
    pub gap: f64,
    pub principal_angles: Vec<f64>,
}

/// Kernel computation plus comparison with the translation modes.
pub fn spectrum_report(op: &DiscreteOperator) -> Result<SpectrumReport> {
    let kb = kernel_basis(op)?;
    let exact = [kernel_pair(op, [1.0, 0.0]).to_vec(), kernel_pair(op, [0.0, 1.0]).to_vec()];
    let found = [kb.vectors[0].to_vec(), kb.vectors[1].to_vec()];
    let cos = principal_cosines(op, &found, &exact);
    Ok(SpectrumReport {
        epsilon: op.epsilon,
        grid: op.grid,
        eigenvalues: vec![kb.eigenvalues[0], kb.eigenvalues[1], kb.gap],
        gap: kb.gap,
        principal_angles: cos,
    })
}

/// Bracket for `c(eps) = eps^2 min ||L x|| / ||x||` over `x` orthogonal to `constraints`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InverseEstimate {
    /// `eps^2 ||L v|| / ||v||` at the computed minimizer `v` (an upper bound).
    pub c: f64,
    /// `eps^2` times the lowest eigenvalue of the compression (a lower bound).
    pub lower: f64,
}

/// Since `<L x, x> <= ||L x|| ||x||`, the lowest eigenvalue of the compression
/// of `L` to the complement bounds `min ||L x|| / ||x||` from below; evaluating
/// `||L v||` at the corresponding eigenvector bounds it from above.
pub fn inverse_estimate(op: &DiscreteOperator, constraints: &[Vec<f64>]) -> Result<InverseEstimate> {
    let opts = EigenOptions { wanted: 1, block: 4, tol: 2e-6, maxiter: 600, seed: 11, squared: false };
    let ep = lowest_eigenpairs(op, opts, constraints)?;
    let mut v = ep.vectors[0].clone();
    for q in orthonormalize(op, constraints) {
        let c = op.inner(&q, &v);
        v.iter_mut().zip(&q).for_each(|(vi, qi)| *vi -= c * qi);
    }
    let lam = ep.values[0];
    let upper = op.norm(&op.apply(&v)) / op.norm(&v);
    if upper <= 1e-14 {
        return Err(GlError::SubspaceDeficient { value: upper });
    }
    let e2 = op.epsilon * op.epsilon;
    Ok(InverseEstimate { c: e2 * upper, lower: e2 * lam })
}

/// One row of the inverse-estimate table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InverseEstimateRow {
    pub epsilon: f64,
    pub xi_sq: f64,
    pub c: f64,
    pub lower: f64,
}

/// Grid choice for a family of scales, in units of `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledGrid {
    pub r_over_eps: f64,
    pub h_over_eps: f64,
}

impl Default for ScaledGrid {
    fn default() -> Self {
        Self { r_over_eps: 10.0, h_over_eps: 0.1 }
    }
}

/// Computes `c(eps)` on the complement of the translation modes for each scale.
pub fn verify_inverse_estimate(eps_list: &[f64], grid: ScaledGrid, xi_sq: f64) -> Result<Vec<InverseEstimateRow>> {
    eps_list
        .iter()
        .map(|&eps| {
            let profile = crate::vortex2d::solve_vortex_profile(eps, 20.0 * eps, 4001)?;
            let g = Grid2d::new(grid.r_over_eps * eps, grid.h_over_eps * eps);
            let op = assemble_model_mode_operator(&profile, g, xi_sq)?;
            let k = [kernel_pair(&op, [1.0, 0.0]).to_vec(), kernel_pair(&op, [0.0, 1.0]).to_vec()];
            let est = inverse_estimate(&op, &k)?;
            Ok(InverseEstimateRow { epsilon: eps, xi_sq, c: est.c, lower: est.lower })
        })
        .collect()
}

/// Preconditioned conjugate gradients for `L x = b` (requires `L` positive
/// definite, e.g. a nonzero shift). Returns `x` and the iteration count.
pub fn solve_mode(op: &DiscreteOperator, b: &[f64], rel_tol: f64, maxiter: usize) -> Result<(Vec<f64>, usize)> {
    let sp = ScaledProblem::new(op, false);
    let rhs = sp.to_scaled(b);
    let bnorm = dot(&rhs, &rhs).sqrt();
    let mut x = vec![0.0; rhs.len()];
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = rhs.clone();
    let mut z = r.clone();
    sp.precondition(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=maxiter {
        let ap = sp.apply(&p);
        let alpha = rz / dot(&p, &ap);
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rn = dot(&r, &r).sqrt();
        if rn <= rel_tol * bnorm {
            return Ok((sp.from_scaled(&x), it));
        }
        z.copy_from_slice(&r);
        sp.precondition(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..p.len() {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(GlError::NonConvergence { iterations: maxiter, residual: f64::NAN })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    par::sum_range(a.len(), |i| a[i] * b[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vortex2d::solve_vortex_profile;

    fn small() -> DiscreteOperator {
        let p = solve_vortex_profile(1.0, 16.0, 1601).unwrap();
        assemble_gauge_fixed_operator_2d(&p, Grid2d::new(10.0, 0.125)).unwrap()
    }

    #[test]
    fn rejects_coarse_grid() {
        let p = solve_vortex_profile(1.0, 16.0, 1601).unwrap();
        let e = assemble_gauge_fixed_operator_2d(&p, Grid2d::new(10.0, 0.2)).unwrap_err();
        assert!(matches!(e, GlError::GridTooCoarse { .. }));
    }

    #[test]
    fn poisson_solver_inverts_five_point_laplacian() {
        let g = Grid2d::new(1.0, 0.1);
        let m = g.m;
        let ps = DirichletPoisson::new(&g);
        let u: Vec<f64> = (0..m * m).map(|k| ((k * 37 % 11) as f64) - 5.0).collect();
        let get = |i: i64, j: i64| if i < 0 || j < 0 || i >= m as i64 || j >= m as i64 { 0.0 } else { u[i as usize * m + j as usize] };
        let mut r: Vec<f64> = (0..m * m)
            .map(|k| {
                let (i, j) = ((k / m) as i64, (k % m) as i64);
                (4.0 * get(i, j) - get(i + 1, j) - get(i - 1, j) - get(i, j + 1) - get(i, j - 1)) / 0.01 + 2.0 * get(i, j)
            })
            .collect();
        ps.solve(&mut r, 2.0);
        for (a, b) in r.iter().zip(&u) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn kernel_pair_is_nearly_annihilated() {
        let op = small();
        let k = kernel_pair(&op, [1.0, 0.0]).to_vec();
        let lk = op.apply(&k);
        let rel = op.norm(&lk) / op.norm(&k);
        assert!(rel < 5e-2, "{rel}");
    }
}
