//! The vortex ansatz on a Fermi tube around `S`, its Ginzburg-Landau residual
//! and the weighted Hölder norms that measure it.
//!
//! The tube grid has `nx` periodic slices along `S` and an `n x n` centred grid
//! in each normal fiber. Connection components are stored in coordinates
//! `(A_x, A_1, A_2)`; for the model metrics the normal coordinates are already
//! orthonormal and `A(e_x) = A_x / sqrt(w)`.

use crate::error::{GlError, Result};
use crate::geometry::ModelManifold;
use crate::par;
use crate::vortex2d::VortexProfile;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Periodic slices along `S` times a centred square grid in each fiber.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeGrid {
    pub nx: usize,
    #[serde(rename = "L0")]
    pub l0: f64,
    /// Fiber nodes per side (odd, the centre node sits on `S`).
    pub n: usize,
    pub h: f64,
}

impl TubeGrid {
    /// Grid with fiber half-width at least `half_width`.
    pub fn new(l0: f64, nx: usize, half_width: f64, h: f64) -> Self {
        let k = (half_width / h).ceil() as usize;
        Self { nx: nx.max(1), l0, n: 2 * k + 1, h }
    }

    pub fn hx(&self) -> f64 {
        self.l0 / self.nx as f64
    }

    pub fn x(&self, s: usize) -> f64 {
        s as f64 * self.hx()
    }

    pub fn y(&self, i: usize) -> f64 {
        (i as f64 - ((self.n - 1) / 2) as f64) * self.h
    }

    pub fn half_width(&self) -> f64 {
        ((self.n - 1) / 2) as f64 * self.h
    }

    pub fn fiber_len(&self) -> usize {
        self.n * self.n
    }

    pub fn len(&self) -> usize {
        self.nx * self.fiber_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, s: usize, i: usize, j: usize) -> usize {
        (s * self.n + i) * self.n + j
    }

    /// `(s, i, j)` of a flat index.
    pub fn split(&self, k: usize) -> (usize, usize, usize) {
        let f = self.fiber_len();
        (k / f, (k % f) / self.n, k % self.n)
    }

    pub fn point(&self, k: usize) -> (f64, [f64; 2]) {
        let (s, i, j) = self.split(k);
        (self.x(s), [self.y(i), self.y(j)])
    }
}

/// A normal vector field along `S`, sampled on the slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalField {
    #[serde(rename = "L0")]
    pub l0: f64,
    pub v: Vec<[f64; 2]>,
}

impl NormalField {
    pub fn zero(nx: usize, l0: f64) -> Self {
        Self { l0, v: vec![[0.0; 2]; nx.max(1)] }
    }

    pub fn from_fn(nx: usize, l0: f64, f: impl Fn(f64) -> [f64; 2]) -> Self {
        let nx = nx.max(1);
        Self { l0, v: (0..nx).map(|s| f(s as f64 * l0 / nx as f64)).collect() }
    }

    /// `delta cos(2 pi k x / L0) e_dir`.
    pub fn cosine_mode(nx: usize, l0: f64, delta: f64, k: usize, dir: usize) -> Self {
        Self::from_fn(nx, l0, |x| {
            let mut v = [0.0; 2];
            v[dir] = delta * (2.0 * std::f64::consts::PI * k as f64 * x / l0).cos();
            v
        })
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.v.iter().map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt()).fold(0.0, f64::max)
    }

    /// Spectral derivative of order `order` (exact for trigonometric polynomials).
    pub fn derivative(&self, order: u32) -> Vec<[f64; 2]> {
        let n = self.v.len();
        if n < 3 {
            return vec![[0.0; 2]; n];
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let mut out = vec![[0.0; 2]; n];
        for c in 0..2 {
            let mut buf: Vec<Complex64> = self.v.iter().map(|v| Complex64::new(v[c], 0.0)).collect();
            fwd.process(&mut buf);
            for (j, b) in buf.iter_mut().enumerate() {
                let kk = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
                let kk = if n % 2 == 0 && j == n / 2 { 0.0 } else { kk };
                let k = 2.0 * std::f64::consts::PI * kk / self.l0;
                *b *= Complex64::new(0.0, k).powu(order) / n as f64;
            }
            inv.process(&mut buf);
            for (o, b) in out.iter_mut().zip(&buf) {
                o[c] = b.re;
            }
        }
        out
    }

    /// Trigonometric interpolant and its derivative at `x`.
    pub fn eval(&self, x: f64) -> ([f64; 2], [f64; 2]) {
        let n = self.v.len();
        if n < 3 {
            return (self.v[0], [0.0; 2]);
        }
        let mut val = [0.0; 2];
        let mut der = [0.0; 2];
        let two_pi = 2.0 * std::f64::consts::PI;
        for j in 0..n {
            let kk = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
            let half = n % 2 == 0 && j == n / 2;
            let k = two_pi * kk / self.l0;
            for c in 0..2 {
                let mut coef = Complex64::new(0.0, 0.0);
                for (s, v) in self.v.iter().enumerate() {
                    let ang = -two_pi * (j * s) as f64 / n as f64;
                    coef += v[c] * Complex64::new(ang.cos(), ang.sin());
                }
                coef /= n as f64;
                let e = Complex64::new((k * x).cos(), (k * x).sin());
                if half {
                    // the Nyquist term is taken as a cosine
                    val[c] += (coef * (k * x).cos()).re;
                    der[c] -= (coef * k * (k * x).sin()).re;
                } else {
                    val[c] += (coef * e).re;
                    der[c] += (coef * e * Complex64::new(0.0, k)).re;
                }
            }
        }
        (val, der)
    }

    /// `sup|v| + sup|v'| + sup|v''| + [v'']_gamma`.
    pub fn c2_gamma_norm(&self, gamma: f64) -> f64 {
        let sup = |w: &[[f64; 2]]| w.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max);
        let d1 = self.derivative(1);
        let d2 = self.derivative(2);
        let n = self.v.len();
        let dx = self.l0 / n as f64;
        let mut semi = 0.0f64;
        for a in 0..n {
            for b in (a + 1)..n {
                let sep = ((b - a) as f64 * dx).min(self.l0 - (b - a) as f64 * dx);
                let diff = (d2[a][0] - d2[b][0]).hypot(d2[a][1] - d2[b][1]);
                semi = semi.max(diff / sep.powf(gamma));
            }
        }
        sup(&self.v) + sup(&d1) + sup(&d2) + semi
    }
}

/// Vortex fields planted at a fiber point, with the far-field cutoff applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Planted {
    pub psi: Complex64,
    pub b: [f64; 2],
    pub curvature: f64,
    pub dpsi: [Complex64; 2],
}

/// Quintic step from 0 at `r1` to 1 at `r2`, and its derivative.
pub fn quintic_step(r: f64, r1: f64, r2: f64) -> (f64, f64) {
    if r <= r1 {
        return (0.0, 0.0);
    }
    if r >= r2 {
        return (1.0, 0.0);
    }
    let t = (r - r1) / (r2 - r1);
    let v = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
    let d = 30.0 * t * t * (1.0 - t) * (1.0 - t) / (r2 - r1);
    (v, d)
}

/// The one-vortex at `z` with `(f, a)` blended to `(1, 1)` between `r1` and `r2`.
pub fn planted_vortex(profile: &VortexProfile, z: [f64; 2], cutoff: (f64, f64)) -> Planted {
    let r = z[0].hypot(z[1]);
    let rv = profile.radial(r.min(profile.r_max()));
    let (chi, dchi) = quintic_step(r, cutoff.0, cutoff.1);
    let (g, gp, s, sp) = if chi == 0.0 && r <= profile.r_max() {
        (rv.g, rv.gp, rv.s, rv.sp)
    } else {
        let f = (1.0 - chi) * rv.f + chi;
        let fp = (1.0 - chi) * rv.fp + dchi * (1.0 - rv.f);
        let a = (1.0 - chi) * rv.a + chi;
        let ap = (1.0 - chi) * rv.ap + dchi * (1.0 - rv.a);
        (f / r, fp / r - f / (r * r), a / (r * r), ap / (r * r) - 2.0 * a / (r * r * r))
    };
    let zc = Complex64::new(z[0], z[1]);
    let psi = zc * g;
    let b = [-s * z[1], s * z[0]];
    let curvature = 2.0 * s + r * sp;
    let (u1, u2) = if r > 0.0 { (z[0] / r, z[1] / r) } else { (0.0, 0.0) };
    let i1 = Complex64::new(0.0, 1.0);
    // D_k psi = d_k(g z) - i A_k g z
    let d1 = g + zc * (gp * u1) - i1 * b[0] * psi;
    let d2 = i1 * g + zc * (gp * u2) - i1 * b[1] * psi;
    Planted { psi, b, curvature, dpsi: [d1, d2] }
}

/// The ansatz `(A, phi)` built from a normal field `v`.
#[derive(Debug, Clone)]
pub struct ApproximateSolution {
    pub grid: TubeGrid,
    pub epsilon: f64,
    pub v: NormalField,
    /// `dv/dx` on the slices.
    pub dv: Vec<[f64; 2]>,
    /// `(A_x, A_1, A_2)` per node.
    pub a: Vec<[f64; 3]>,
    pub phi: Vec<Complex64>,
    /// Fiber curvature `F_B(e_1, e_2)` of the planted vortex per node.
    pub fiber_curvature: Vec<f64>,
    /// `D_B psi` of the planted vortex per node.
    pub fiber_dpsi: Vec<[Complex64; 2]>,
    pub cutoff: (f64, f64),
    /// `1 - f` at the start of the cutoff.
    pub tail_level: f64,
}

/// Default cutoff start `10 eps + max|v|`, ending at the tube radius.
pub fn default_cutoff(eps: f64, v: &NormalField, grid: &TubeGrid) -> (f64, f64) {
    (10.0 * eps + v.max_abs(), grid.half_width())
}

/// Plants the vortex in each fiber, centred at `v(x)`, with `A(e_x) = -v'_rho B(e_rho)`.
pub fn build_approximate_solution(
    m: &ModelManifold,
    profile: &VortexProfile,
    v: &NormalField,
    grid: TubeGrid,
    cutoff: Option<(f64, f64)>,
) -> Result<ApproximateSolution> {
    let eps = profile.epsilon;
    let required = 10.0 * eps + v.max_abs();
    if grid.half_width() < required {
        return Err(GlError::TubeTooNarrow { tube: grid.half_width(), required });
    }
    if v.len() != grid.nx {
        return Err(GlError::Config { path: "v".into(), message: format!("{} samples for {} slices", v.len(), grid.nx) });
    }
    let norm = v.c2_gamma_norm(0.5);
    if norm > eps {
        return Err(GlError::VTooLarge { norm, limit: eps });
    }
    if m.dimension() == 2 && grid.nx != 1 {
        return Err(GlError::Config { path: "grid.nx".into(), message: "the plane has a single fiber".into() });
    }
    let cutoff = cutoff.unwrap_or_else(|| default_cutoff(eps, v, &grid));
    if cutoff.0 > profile.r_max() {
        return Err(GlError::Config {
            path: "profile.rmax".into(),
            message: format!("profile radius {} below cutoff start {}", profile.r_max(), cutoff.0),
        });
    }
    let dv = v.derivative(1);
    let planted: Vec<Planted> = par::map_range(grid.len(), |k| {
        let (s, i, j) = grid.split(k);
        let z = [grid.y(i) - v.v[s][0], grid.y(j) - v.v[s][1]];
        planted_vortex(profile, z, cutoff)
    });
    let mut a = Vec::with_capacity(grid.len());
    let mut phi = Vec::with_capacity(grid.len());
    let mut fiber_curvature = Vec::with_capacity(grid.len());
    let mut fiber_dpsi = Vec::with_capacity(grid.len());
    for (k, p) in planted.iter().enumerate() {
        let s = k / grid.fiber_len();
        let ax = -(dv[s][0] * p.b[0] + dv[s][1] * p.b[1]);
        a.push([ax, p.b[0], p.b[1]]);
        phi.push(p.psi);
        fiber_curvature.push(p.curvature);
        fiber_dpsi.push(p.dpsi);
    }
    let tail_level = 1.0 - profile.radial(cutoff.0.min(profile.r_max())).f;
    Ok(ApproximateSolution {
        grid,
        epsilon: eps,
        v: v.clone(),
        dv,
        a,
        phi,
        fiber_curvature,
        fiber_dpsi,
        cutoff,
        tail_level,
    })
}

impl ApproximateSolution {
    /// Largest violation of the planted vortex equations
    /// `eps^2 F_12 = (1 - |phi|^2) / 2` and `D_1 phi + i D_2 phi = 0`, scaled by `eps`.
    pub fn fiber_vortex_residual(&self) -> f64 {
        let e2 = self.epsilon * self.epsilon;
        par::max_range(self.phi.len(), |k| {
            let r1 = (e2 * self.fiber_curvature[k] - 0.5 * (1.0 - self.phi[k].norm_sqr())).abs();
            let d = self.fiber_dpsi[k];
            let r2 = self.epsilon * (d[0] + Complex64::new(0.0, 1.0) * d[1]).norm();
            r1.max(r2)
        })
    }

    /// Total transverse flux `int F_12` per slice.
    pub fn fiber_flux(&self) -> Vec<f64> {
        let f = self.grid.fiber_len();
        let h2 = self.grid.h * self.grid.h;
        (0..self.grid.nx).map(|s| self.fiber_curvature[s * f..(s + 1) * f].iter().sum::<f64>() * h2).collect()
    }

    /// Writes one CSV per field component plus `header.json` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let header = serde_json::json!({
            "grid": self.grid,
            "epsilon": self.epsilon,
            "v": self.v.v,
            "cutoff": [self.cutoff.0, self.cutoff.1],
            "components": ["A_x", "A_1", "A_2", "phi_re", "phi_im"],
            "columns": ["x", "y1", "y2", "value"],
        });
        std::fs::write(dir.join("header.json"), serde_json::to_string_pretty(&header)?)?;
        let comps: [(&str, Box<dyn Fn(usize) -> f64 + '_>); 5] = [
            ("A_x", Box::new(|k| self.a[k][0])),
            ("A_1", Box::new(|k| self.a[k][1])),
            ("A_2", Box::new(|k| self.a[k][2])),
            ("phi_re", Box::new(|k| self.phi[k].re)),
            ("phi_im", Box::new(|k| self.phi[k].im)),
        ];
        for (name, get) in comps.iter() {
            let file = std::fs::File::create(dir.join(format!("{name}.csv")))?;
            let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
            w.write_record(["x", "y1", "y2", "value"])?;
            for k in 0..self.grid.len() {
                let (x, y) = self.grid.point(k);
                w.write_record([x.to_string(), y[0].to_string(), y[1].to_string(), get(k).to_string()])?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

/// Fourth-order central differences on the tube grid. Along `x` the grid is
/// periodic (a single slice means no `x` dependence); in the fibers values
/// within four nodes of the edge are not differentiated.
struct Stencil {
    grid: TubeGrid,
}

const C4: [f64; 2] = [8.0 / 12.0, -1.0 / 12.0];

impl Stencil {
    fn margin(&self, k: usize) -> bool {
        let (_, i, j) = self.grid.split(k);
        let n = self.grid.n;
        i < 4 || j < 4 || i + 4 >= n || j + 4 >= n
    }

    /// Derivative along axis `mu` (0 = x) of a field given by `get`.
    fn d<T>(&self, k: usize, mu: usize, get: &impl Fn(usize) -> T) -> T
    where
        T: std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
    {
        let g = &self.grid;
        let (s, i, j) = g.split(k);
        let at = |o: i64| -> usize {
            match mu {
                0 => {
                    let nx = g.nx as i64;
                    g.index(((s as i64 + o).rem_euclid(nx)) as usize, i, j)
                }
                1 => g.index(s, (i as i64 + o) as usize, j),
                _ => g.index(s, i, (j as i64 + o) as usize),
            }
        };
        let step = if mu == 0 { g.hx() } else { g.h };
        (get(at(1)) - get(at(-1))) * (C4[0] / step) + (get(at(2)) - get(at(-2))) * (C4[1] / step)
    }

    fn has_x(&self) -> bool {
        self.grid.nx >= 5
    }
}

/// Which metric to use in the residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricChoice {
    /// The model metric `w dx^2 + dy^2`.
    Exact,
    /// The product metric `dx^2 + dy^2`.
    Product,
}

/// Ginzburg-Landau residual `(b, h)` of a configuration on the tube grid:
/// `b = d*F - Im(conj(phi) D phi) / eps^2` and `h = D*D phi - (1 - |phi|^2) phi / (2 eps^2)`.
#[derive(Debug, Clone)]
pub struct Residual {
    pub grid: TubeGrid,
    pub epsilon: f64,
    /// Orthonormal-frame components `(b(e_x), b(e_1), b(e_2))`.
    pub b: Vec<[f64; 3]>,
    pub h: Vec<Complex64>,
}

impl Residual {
    pub fn max_abs(&self) -> (f64, f64) {
        let mb = self.b.iter().map(|b| (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt()).fold(0.0, f64::max);
        let mh = self.h.iter().map(|h| h.norm()).fold(0.0, f64::max);
        (mb, mh)
    }
}

/// Curvature components `(F_x1, F_x2, F_12)` by differences, compared with the
/// closed forms `F_x alpha = -v'_rho F_B(e_rho, e_alpha)`, `F_12 = F_B`.
#[derive(Debug, Clone)]
pub struct CurvatureReport {
    pub finite_difference: Vec<[f64; 3]>,
    pub closed_form: Vec<[f64; 3]>,
    pub max_error: f64,
}

pub fn curvature_components(apx: &ApproximateSolution) -> CurvatureReport {
    let st = Stencil { grid: apx.grid };
    let a = &apx.a;
    let fd: Vec<[f64; 3]> = par::map_range(apx.grid.len(), |k| {
        if st.margin(k) {
            return [0.0; 3];
        }
        let dx = |c: usize| if st.has_x() { st.d(k, 0, &|q| a[q][c]) } else { 0.0 };
        let d1 = |c: usize| st.d(k, 1, &|q| a[q][c]);
        let d2 = |c: usize| st.d(k, 2, &|q| a[q][c]);
        [dx(1) - d1(0), dx(2) - d2(0), d1(2) - d2(1)]
    });
    let closed: Vec<[f64; 3]> = (0..apx.grid.len())
        .map(|k| {
            let s = k / apx.grid.fiber_len();
            let fb = apx.fiber_curvature[k];
            // F_B(e_rho, e_alpha) = fb * eps_{rho alpha}
            [apx.dv[s][1] * fb, -apx.dv[s][0] * fb, fb]
        })
        .collect();
    let max_error = (0..fd.len())
        .filter(|&k| !st.margin(k) && (st.has_x() || apx.grid.nx == 1))
        .map(|k| (0..3).map(|c| (fd[k][c] - closed[k][c]).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    CurvatureReport { finite_difference: fd, closed_form: closed, max_error }
}

/// Residual of the Ginzburg-Landau equations for `(A, phi)` in the chosen metric.
pub fn gl_residual(apx: &ApproximateSolution, m: &ModelManifold, metric: MetricChoice) -> Residual {
    gl_residual_fields(&apx.grid, apx.epsilon, &apx.a, &apx.phi, m, metric)
}

/// As [`gl_residual`] for arbitrary fields on a tube grid.
pub fn gl_residual_fields(
    grid: &TubeGrid,
    eps: f64,
    a: &[[f64; 3]],
    phi: &[Complex64],
    m: &ModelManifold,
    metric: MetricChoice,
) -> Residual {
    let st = Stencil { grid: *grid };
    let e2 = eps * eps;
    let i1 = Complex64::new(0.0, 1.0);
    let inner_margin = |k: usize| {
        let (_, i, j) = grid.split(k);
        let n = grid.n;
        i < 8 || j < 8 || i + 8 >= n || j + 8 >= n
    };
    let warp = |k: usize| {
        let (x, y) = grid.point(k);
        match metric {
            MetricChoice::Exact => m.warp(x, y).w,
            MetricChoice::Product => 1.0,
        }
    };
    let w: Vec<f64> = par::map_range(grid.len(), warp);
    let has_x = st.has_x();
    let deriv = |k: usize, mu: usize, get: &dyn Fn(usize) -> f64| -> f64 {
        if mu == 0 && !has_x {
            0.0
        } else {
            st.d(k, mu, &|q| get(q))
        }
    };
    let derivc = |k: usize, mu: usize, get: &dyn Fn(usize) -> Complex64| -> Complex64 {
        if mu == 0 && !has_x {
            Complex64::new(0.0, 0.0)
        } else {
            st.d(k, mu, &|q| get(q))
        }
    };
    // F_{mu nu} with (mu, nu) in (x1, x2, 12), and D_mu phi
    let f: Vec<[f64; 3]> = par::map_range(grid.len(), |k| {
        if st.margin(k) {
            return [0.0; 3];
        }
        [
            deriv(k, 0, &|q| a[q][1]) - deriv(k, 1, &|q| a[q][0]),
            deriv(k, 0, &|q| a[q][2]) - deriv(k, 2, &|q| a[q][0]),
            deriv(k, 1, &|q| a[q][2]) - deriv(k, 2, &|q| a[q][1]),
        ]
    });
    let dphi: Vec<[Complex64; 3]> = par::map_range(grid.len(), |k| {
        if st.margin(k) {
            return [Complex64::new(0.0, 0.0); 3];
        }
        let mut out = [Complex64::new(0.0, 0.0); 3];
        for (mu, o) in out.iter_mut().enumerate() {
            *o = derivc(k, mu, &|q| phi[q]) - i1 * a[k][mu] * phi[k];
        }
        out
    });
    // m g^{mu mu} g^{nu nu} F_{mu nu}, with g^{xx} = 1 / w and m = sqrt(w)
    let mf: Vec<[f64; 3]> = (0..grid.len())
        .map(|k| {
            let sw = w[k].sqrt();
            [f[k][0] / sw, f[k][1] / sw, sw * f[k][2]]
        })
        .collect();
    let mdphi: Vec<[Complex64; 3]> = (0..grid.len())
        .map(|k| {
            let sw = w[k].sqrt();
            [dphi[k][0] / sw, dphi[k][1] * sw, dphi[k][2] * sw]
        })
        .collect();
    let out: Vec<([f64; 3], Complex64)> = par::map_range(grid.len(), |k| {
        if inner_margin(k) {
            return ([0.0; 3], Complex64::new(0.0, 0.0));
        }
        let sw = w[k].sqrt();
        // (d*F)^nu = -(1/m) d_mu (m F^{mu nu}); F^{x1} etc. from mf
        let up_x = -(deriv(k, 1, &|q| -mf[q][0]) + deriv(k, 2, &|q| -mf[q][1])) / sw;
        let up_1 = -(deriv(k, 0, &|q| mf[q][0]) + deriv(k, 2, &|q| -mf[q][2])) / sw;
        let up_2 = -(deriv(k, 0, &|q| mf[q][1]) + deriv(k, 1, &|q| mf[q][2])) / sw;
        let cur = |mu: usize| (phi[k].conj() * dphi[k][mu]).im / e2;
        // lower the index, then pass to the orthonormal frame (only x is rescaled)
        let bx = (w[k] * up_x - cur(0)) / sw;
        let b1 = up_1 - cur(1);
        let b2 = up_2 - cur(2);
        let mut lap = Complex64::new(0.0, 0.0);
        for mu in 0..3 {
            let dm = derivc(k, mu, &|q| mdphi[q][mu]);
            lap += dm - i1 * a[k][mu] * mdphi[k][mu];
        }
        let h = -lap / sw - (1.0 - phi[k].norm_sqr()) * phi[k] / (2.0 * e2);
        ([bx, b1, b2], h)
    });
    let (b, h) = out.into_iter().unzip();
    Residual { grid: *grid, epsilon: eps, b, h }
}

/// Parameters of the weighted Hölder norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedNormParams {
    pub mu: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub k: usize,
}

impl WeightedNormParams {
    /// `mu` at half the fitted decay rate of the profile.
    pub fn for_profile(profile: &VortexProfile, gamma: f64) -> Self {
        Self { mu: 0.5 * crate::vortex2d::fit_decay_rate(profile), gamma, epsilon: profile.epsilon, k: 0 }
    }
}

/// The two parts of the weighted norm; `value` is their maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolderNorm {
    pub sup: f64,
    pub seminorm: f64,
    pub value: f64,
}

/// Weighted Hölder norm of a field with `dim` real components per node
/// (pointwise magnitude is the Euclidean norm). Pairs are sampled along the
/// coordinate lines and fiber diagonals at separations up to `eps`, measured
/// as `|x1 - x2| + |y1 - y2|`.
pub fn weighted_holder_norm(grid: &TubeGrid, data: &[f64], dim: usize, p: &WeightedNormParams) -> HolderNorm {
    let eps = p.epsilon;
    let weight = |k: usize| {
        let (_, y) = grid.point(k);
        (p.mu * y[0].hypot(y[1]) / eps).exp()
    };
    let mag = |k: usize| data[k * dim..(k + 1) * dim].iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff = |a: usize, b: usize| {
        (0..dim).map(|c| (data[a * dim + c] - data[b * dim + c]).powi(2)).sum::<f64>().sqrt()
    };
    let sup = par::max_range(grid.len(), |k| weight(k) * mag(k));
    let n = grid.n as i64;
    let hx = grid.hx();
    let mut dirs: Vec<(i64, i64, i64, f64)> = vec![(0, 1, 0, grid.h), (0, 0, 1, grid.h), (0, 1, 1, 2.0 * grid.h), (0, 1, -1, 2.0 * grid.h)];
    if grid.nx > 1 {
        dirs.push((1, 0, 0, hx));
    }
    let lw: Vec<f64> = (0..grid.len()).map(|k| weight(k).ln()).collect();
    let semi = par::max_range(grid.len(), |k| {
        let (s, i, j) = grid.split(k);
        let mut best = 0.0f64;
        for &(ds, di, dj, step) in &dirs {
            let mut t = 1i64;
            while t as f64 * step <= eps * (1.0 + 1e-12) {
                let (ii, jj) = (i as i64 + t * di, j as i64 + t * dj);
                if ii < 0 || jj < 0 || ii >= n || jj >= n {
                    break;
                }
                let ss = ((s as i64 + t * ds).rem_euclid(grid.nx as i64)) as usize;
                if ds != 0 && ss == s {
                    break;
                }
                let q = grid.index(ss, ii as usize, jj as usize);
                let sep = t as f64 * step;
                let wgt = (0.5 * (lw[k] + lw[q])).exp();
                best = best.max(eps.powf(p.gamma) * wgt * diff(k, q) / sep.powf(p.gamma));
                t += 1;
            }
        }
        best
    });
    HolderNorm { sup, seminorm: semi, value: sup.max(semi) }
}

/// Composite norm `eps ||b|| + ||h||` of a residual.
pub fn residual_weighted_norm(res: &Residual, p: &WeightedNormParams) -> f64 {
    let b: Vec<f64> = res.b.iter().flat_map(|b| b.iter().copied()).collect();
    let h: Vec<f64> = res.h.iter().flat_map(|h| [h.re, h.im]).collect();
    p.epsilon * weighted_holder_norm(&res.grid, &b, 3, p).value + weighted_holder_norm(&res.grid, &h, 2, p).value
}

/// Zero of `phi` in each slice: the cell with the smallest `|phi|` followed by
/// Newton on the bilinear interpolant.
pub fn vortex_centers(grid: &TubeGrid, phi: &[Complex64]) -> Vec<[f64; 2]> {
    let n = grid.n;
    (0..grid.nx)
        .map(|s| {
            let base = s * grid.fiber_len();
            let mut best = (f64::INFINITY, 0usize, 0usize);
            for i in 0..n - 1 {
                for j in 0..n - 1 {
                    let m = phi[base + i * n + j].norm();
                    if m < best.0 {
                        best = (m, i, j);
                    }
                }
            }
            let (_, i0, j0) = best;
            let mut out = [grid.y(i0), grid.y(j0)];
            // search the four cells around the minimising node
            let mut best_res = f64::INFINITY;
            for ci in i0.saturating_sub(1)..=(i0).min(n - 2) {
                for cj in j0.saturating_sub(1)..=(j0).min(n - 2) {
                    let c00 = phi[base + ci * n + cj];
                    let c10 = phi[base + (ci + 1) * n + cj];
                    let c01 = phi[base + ci * n + cj + 1];
                    let c11 = phi[base + (ci + 1) * n + cj + 1];
                    let (mut s1, mut s2) = (0.5, 0.5);
                    for _ in 0..30 {
                        let val = c00 * (1.0 - s1) * (1.0 - s2) + c10 * s1 * (1.0 - s2) + c01 * (1.0 - s1) * s2 + c11 * s1 * s2;
                        let d1 = (c10 - c00) * (1.0 - s2) + (c11 - c01) * s2;
                        let d2 = (c01 - c00) * (1.0 - s1) + (c11 - c10) * s1;
                        let det = d1.re * d2.im - d1.im * d2.re;
                        if det.abs() < 1e-300 {
                            break;
                        }
                        let ds1 = (val.re * d2.im - val.im * d2.re) / det;
                        let ds2 = (d1.re * val.im - d1.im * val.re) / det;
                        s1 -= ds1;
                        s2 -= ds2;
                        if ds1.abs() + ds2.abs() < 1e-15 {
                            break;
                        }
                    }
                    let inside = (-1e-9..=1.0 + 1e-9).contains(&s1) && (-1e-9..=1.0 + 1e-9).contains(&s2);
                    let val = c00 * (1.0 - s1) * (1.0 - s2) + c10 * s1 * (1.0 - s2) + c01 * (1.0 - s1) * s2 + c11 * s1 * s2;
                    if inside && val.norm() < best_res {
                        best_res = val.norm();
                        out = [grid.y(ci) + s1 * grid.h, grid.y(cj) + s2 * grid.h];
                    }
                }
            }
            out
        })
        .collect()
}

/// Fiber integral `int eps^2 <F(e_x, .), F(w, .)> + <D_x phi, D_w phi>` on slice `s`,
/// from difference curvature and covariant derivatives of the stored fields.
pub fn tangential_pairing(apx: &ApproximateSolution, s: usize, w: [f64; 2]) -> f64 {
    let st = Stencil { grid: apx.grid };
    let g = &apx.grid;
    let eps = apx.epsilon;
    let i1 = Complex64::new(0.0, 1.0);
    let a = &apx.a;
    let phi = &apx.phi;
    let mut sum = 0.0;
    for i in 0..g.n {
        for j in 0..g.n {
            let k = g.index(s, i, j);
            if st.margin(k) {
                continue;
            }
            let dx = |c: usize| st.d(k, 0, &|q| a[q][c]);
            let d1 = |c: usize| st.d(k, 1, &|q| a[q][c]);
            let d2 = |c: usize| st.d(k, 2, &|q| a[q][c]);
            let fx1 = dx(1) - d1(0);
            let fx2 = dx(2) - d2(0);
            let f12 = d1(2) - d2(1);
            // F(w, e_alpha): alpha = 1 -> -w_2 F_12, alpha = 2 -> w_1 F_12
            let fw = [-w[1] * f12, w[0] * f12];
            let dxphi = st.d(k, 0, &|q| phi[q]) - i1 * a[k][0] * phi[k];
            let d1phi = st.d(k, 1, &|q| phi[q]) - i1 * a[k][1] * phi[k];
            let d2phi = st.d(k, 2, &|q| phi[q]) - i1 * a[k][2] * phi[k];
            let dw = d1phi * w[0] + d2phi * w[1];
            sum += eps * eps * (fx1 * fw[0] + fx2 * fw[1]) + (dxphi.conj() * dw).re;
        }
    }
    sum * g.h * g.h
}

/// Writes a CSV table with a header row.
pub fn write_table<W: Write>(w: W, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header)?;
    for r in rows {
        wr.write_record(r.iter().map(|v| v.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}
