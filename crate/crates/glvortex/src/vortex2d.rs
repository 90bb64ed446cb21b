//! The planar degree-1 vortex at critical coupling.
//!
//! With `psi = f(r) e^{i theta}` and connection `A = a(r) d theta` the vortex
//! equations reduce to
//!
//! ```text
//! f' = f (1 - a) / r,        a' = r (1 - f^2) / (2 eps^2),
//! ```
//!
//! with `f(0) = a(0) = 0` and `f, a -> 1` at infinity. The solver works in the
//! variables `q = ln(f / r)` and `a`, in which the system is regular at the
//! origin (`q' = -a / r`), and discretizes it with the box scheme on each grid
//! interval. The boundary conditions are `a(0) = 0` and `f(R_max) = 1`.
//!
//! Cartesian fields use the smooth trivialization `psi = g(r) (y1 + i y2)` with
//! `g = f / r`, `A = s(r) (-y2, y1)` with `s = a / r^2`.

use crate::error::{GlError, Result};
use crate::par;
use crate::sparse::{SparseLu, TripletMatrix};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};

/// Radial degree-1 vortex profile on a grid `0 = r_0 < ... < r_{N-1} = R_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VortexProfile {
    pub epsilon: f64,
    pub r_grid: Vec<f64>,
    pub f: Vec<f64>,
    pub a: Vec<f64>,
    /// `lim_{r -> 0} f(r) / r`.
    pub slope: f64,
    pub iterations: usize,
}

/// Pointwise fields of the vortex in the smooth Cartesian trivialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub psi: Complex64,
    /// The curvature scalar `F_12 = *F`.
    pub curvature: f64,
    /// Covariant derivatives `(D_1 psi, D_2 psi)`.
    pub dpsi: [Complex64; 2],
    /// Connection components `(A_1, A_2)`.
    pub connection: [f64; 2],
}

/// Energy and flux of a profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyFlux {
    pub energy: f64,
    pub flux: f64,
    /// Estimated energy beyond `R_max`.
    pub tail_estimate: f64,
    pub tail_warning: bool,
}

/// Max-norm residuals of the vortex identity and the two first-order equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityReport {
    /// `max |eps^2 F^2 - (1 - f^2)^2 / (4 eps^2)|` over interval midpoints.
    pub squared_identity: f64,
    /// Scaled residual of the `f` equation.
    pub f_equation: f64,
    /// Scaled residual of the `a` equation.
    pub a_equation: f64,
}

const NEWTON_MAX_ITER: usize = 60;

/// Solves the radial vortex equations on a uniform grid with `n_nodes` nodes.
pub fn solve_vortex_profile(epsilon: f64, r_max: f64, n_nodes: usize) -> Result<VortexProfile> {
    if !(epsilon > 0.0) || !(r_max > 0.0) || n_nodes < 2 {
        return Err(GlError::Config {
            path: "profile".into(),
            message: format!("invalid inputs eps={epsilon}, r_max={r_max}, n={n_nodes}"),
        });
    }
    if r_max < 10.0 * epsilon * (1.0 - 1e-12) {
        return Err(GlError::Config {
            path: "profile.r_max".into(),
            message: format!("R_max = {r_max} is below 10 eps = {}", 10.0 * epsilon),
        });
    }
    let h = r_max / (n_nodes - 1) as f64;
    if h > epsilon / 10.0 * (1.0 + 1e-12) {
        return Err(GlError::GridTooCoarse { spacing: h, limit: epsilon / 10.0 });
    }
    let r: Vec<f64> = (0..n_nodes).map(|k| if k + 1 == n_nodes { r_max } else { k as f64 * h }).collect();
    let n = n_nodes;

    let mut x = vec![0.0; 2 * n];
    for k in 0..n {
        let t = 0.6 * r[k] / epsilon;
        let f0 = t.tanh();
        x[2 * k] = if k == 0 { (0.6 / epsilon).ln() } else { (f0 / r[k]).ln() };
        x[2 * k + 1] = f0 * f0;
    }
    x[2 * (n - 1)] = -r_max.ln();

    let mut res = residual(&r, epsilon, &x);
    let mut norm = inf_norm(&res);
    let mut iterations = 0;
    while norm > 1e-13 && iterations < NEWTON_MAX_ITER {
        iterations += 1;
        let jac = jacobian(&r, epsilon, &x);
        let lu = SparseLu::factor(&jac)?;
        let mut dx: Vec<f64> = res.iter().map(|v| -v).collect();
        lu.solve_in_place(&mut dx);
        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-6 {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + step * b).collect();
            let tres = residual(&r, epsilon, &trial);
            let tnorm = inf_norm(&tres);
            if tnorm.is_finite() && (tnorm < norm || tnorm < 1e-12) {
                x = trial;
                res = tres;
                norm = tnorm;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !(norm < 1e-10) {
        return Err(GlError::NonConvergence { iterations, residual: norm });
    }
    let slope = x[0].exp();
    let f: Vec<f64> = (0..n)
        .map(|k| match k {
            0 => 0.0,
            _ if k + 1 == n => 1.0,
            _ => r[k] * x[2 * k].exp(),
        })
        .collect();
    let a: Vec<f64> = (0..n).map(|k| if k == 0 { 0.0 } else { x[2 * k + 1] }).collect();
    Ok(VortexProfile { epsilon, r_grid: r, f, a, slope, iterations })
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::INFINITY } else { m.max(x.abs()) })
}

/// Box-scheme residual in the unknowns `(q_0, a_0, q_1, a_1, ...)`.
fn residual(r: &[f64], eps: f64, x: &[f64]) -> Vec<f64> {
    let n = r.len();
    let mut out = vec![0.0; 2 * n];
    out[0] = x[1];
    for k in 0..n - 1 {
        let h = r[k + 1] - r[k];
        let rm = 0.5 * (r[k] + r[k + 1]);
        let (qk, ak, qn, an) = (x[2 * k], x[2 * k + 1], x[2 * k + 2], x[2 * k + 3]);
        let fm = 0.5 * (r[k] * qk.exp() + r[k + 1] * qn.exp());
        out[2 * k + 1] = eps * ((qn - qk) / h + (ak + an) / (2.0 * rm));
        out[2 * k + 2] = eps * ((an - ak) / h - rm * (1.0 - fm * fm) / (2.0 * eps * eps));
    }
    out[2 * n - 1] = x[2 * (n - 1)] + r[n - 1].ln();
    out
}

fn jacobian(r: &[f64], eps: f64, x: &[f64]) -> TripletMatrix {
    let n = r.len();
    let mut m = TripletMatrix::with_capacity(2 * n, 8 * n);
    m.push(0, 1, 1.0);
    for k in 0..n - 1 {
        let h = r[k + 1] - r[k];
        let rm = 0.5 * (r[k] + r[k + 1]);
        let (qk, qn) = (x[2 * k], x[2 * k + 2]);
        let (fk, fnx) = (r[k] * qk.exp(), r[k + 1] * qn.exp());
        let fm = 0.5 * (fk + fnx);
        let row = 2 * k + 1;
        m.push(row, 2 * k, -eps / h);
        m.push(row, 2 * k + 2, eps / h);
        m.push(row, 2 * k + 1, eps / (2.0 * rm));
        m.push(row, 2 * k + 3, eps / (2.0 * rm));
        let row = 2 * k + 2;
        m.push(row, 2 * k + 1, -eps / h);
        m.push(row, 2 * k + 3, eps / h);
        let c = rm * fm / eps;
        m.push(row, 2 * k, c * 0.5 * fk);
        m.push(row, 2 * k + 2, c * 0.5 * fnx);
    }
    m.push(2 * n - 1, 2 * (n - 1), 1.0);
    m
}

impl VortexProfile {
    pub fn r_max(&self) -> f64 {
        *self.r_grid.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.r_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_grid.is_empty()
    }

    /// `g = f / r` at node `k`.
    pub fn g_node(&self, k: usize) -> f64 {
        if k == 0 { self.slope } else { self.f[k] / self.r_grid[k] }
    }

    /// `f'` at node `k` from the first-order equation.
    pub fn fp_node(&self, k: usize) -> f64 {
        self.g_node(k) * (1.0 - self.a[k])
    }

    /// `a'` at node `k` from the first-order equation.
    pub fn ap_node(&self, k: usize) -> f64 {
        let e2 = self.epsilon * self.epsilon;
        self.r_grid[k] * (1.0 - self.f[k] * self.f[k]) / (2.0 * e2)
    }

    fn app_node(&self, k: usize) -> f64 {
        let e2 = self.epsilon * self.epsilon;
        let (r, f) = (self.r_grid[k], self.f[k]);
        (1.0 - f * f) / (2.0 * e2) - r * f * self.fp_node(k) / e2
    }

    fn gp_node(&self, k: usize) -> f64 {
        if k == 0 { 0.0 } else { -self.g_node(k) * self.a[k] / self.r_grid[k] }
    }

    fn s_node(&self, k: usize) -> f64 {
        if k == 0 {
            1.0 / (4.0 * self.epsilon * self.epsilon)
        } else {
            let r = self.r_grid[k];
            self.a[k] / (r * r)
        }
    }

    fn sp_node(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            let r = self.r_grid[k];
            (self.ap_node(k) - 2.0 * self.a[k] / r) / (r * r)
        }
    }

    fn interval(&self, r: f64) -> usize {
        let k = self.r_grid.partition_point(|&x| x <= r);
        k.saturating_sub(1).min(self.len() - 2)
    }

    fn hermite(&self, k: usize, r: f64, v: (f64, f64), d: (f64, f64)) -> (f64, f64) {
        let (r0, r1) = (self.r_grid[k], self.r_grid[k + 1]);
        let h = r1 - r0;
        let t = (r - r0) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let val = h00 * v.0 + h10 * h * d.0 + h01 * v.1 + h11 * h * d.1;
        let dh00 = (6.0 * t2 - 6.0 * t) / h;
        let dh10 = 3.0 * t2 - 4.0 * t + 1.0;
        let dh01 = (-6.0 * t2 + 6.0 * t) / h;
        let dh11 = 3.0 * t2 - 2.0 * t;
        let der = dh00 * v.0 + dh10 * d.0 + dh01 * v.1 + dh11 * d.1;
        (val, der)
    }

    /// Radial functions at `r`: `(f, a, g, s, F, c)` where `F = a'/r` is the
    /// curvature and `c = g (1 - a)` is the covariant-derivative amplitude.
    pub fn radial(&self, r: f64) -> RadialValues {
        let k = self.interval(r);
        let (f, fp) = self.hermite(k, r, (self.f[k], self.f[k + 1]), (self.fp_node(k), self.fp_node(k + 1)));
        let (a, ap) = self.hermite(k, r, (self.a[k], self.a[k + 1]), (self.ap_node(k), self.ap_node(k + 1)));
        let (g, gp) = self.hermite(k, r, (self.g_node(k), self.g_node(k + 1)), (self.gp_node(k), self.gp_node(k + 1)));
        let (s, sp) = self.hermite(k, r, (self.s_node(k), self.s_node(k + 1)), (self.sp_node(k), self.sp_node(k + 1)));
        let (da, _) = self.hermite(k, r, (self.ap_node(k), self.ap_node(k + 1)), (self.app_node(k), self.app_node(k + 1)));
        let curvature = if r > 1e-9 * self.epsilon {
            da / r
        } else {
            (1.0 - f * f) / (2.0 * self.epsilon * self.epsilon)
        };
        RadialValues { f, fp, a, ap, g, gp, s, sp, curvature, c: g * (1.0 - a) }
    }

    /// Fields at a Cartesian point; `None` outside the disk of radius `R_max`.
    pub fn sample(&self, y: [f64; 2]) -> Option<FieldSample> {
        let r = (y[0] * y[0] + y[1] * y[1]).sqrt();
        if r > self.r_max() * (1.0 + 1e-14) {
            return None;
        }
        let rv = self.radial(r.min(self.r_max()));
        Some(rv.sample_at(y))
    }

    /// Writes the profile as CSV with header `r,f,a`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["r", "f", "a"])?;
        for k in 0..self.len() {
            wr.write_record([self.r_grid[k].to_string(), self.f[k].to_string(), self.a[k].to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a profile written by [`VortexProfile::write_csv`]. The slope at the
    /// origin is recovered from the first interval of the box scheme.
    pub fn read_csv<R: Read>(rd: R, epsilon: f64) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(rd);
        let (mut r, mut f, mut a) = (Vec::new(), Vec::new(), Vec::new());
        for rec in reader.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i).and_then(|s| s.trim().parse::<f64>().ok()).ok_or_else(|| GlError::Config {
                    path: format!("profile.csv[{}]", i),
                    message: "unparsable value".into(),
                })
            };
            r.push(parse(0)?);
            f.push(parse(1)?);
            a.push(parse(2)?);
        }
        if r.len() < 2 {
            return Err(GlError::Config { path: "profile.csv".into(), message: "fewer than 2 rows".into() });
        }
        let slope = f[1] / r[1] * (a[0] + a[1]).exp();
        Ok(Self { epsilon, r_grid: r, f, a, slope, iterations: 0 })
    }
}

/// Radial values of the profile at one radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialValues {
    pub f: f64,
    pub fp: f64,
    pub a: f64,
    pub ap: f64,
    pub g: f64,
    pub gp: f64,
    pub s: f64,
    pub sp: f64,
    pub curvature: f64,
    pub c: f64,
}

impl RadialValues {
    pub fn sample_at(&self, y: [f64; 2]) -> FieldSample {
        let psi = Complex64::new(self.g * y[0], self.g * y[1]);
        let c = Complex64::new(self.c, 0.0);
        FieldSample {
            psi,
            curvature: self.curvature,
            dpsi: [c, Complex64::new(0.0, self.c)],
            connection: [-self.s * y[1], self.s * y[0]],
        }
    }
}

/// Interpolated fields at each point.
pub fn evaluate_vortex_fields(profile: &VortexProfile, points: &[[f64; 2]]) -> Result<Vec<FieldSample>> {
    let rmax = profile.r_max();
    if let Some(p) = points.iter().find(|p| (p[0] * p[0] + p[1] * p[1]).sqrt() > rmax * (1.0 + 1e-14)) {
        return Err(GlError::OutOfDomain { radius: (p[0] * p[0] + p[1] * p[1]).sqrt(), r_max: rmax });
    }
    Ok(par::map_slice(points, |p| profile.sample(*p).expect("checked domain")))
}

/// Energy by the trapezoid rule with nodal derivatives from the first-order
/// system, and the flux `2 pi a(R_max)`, which is the midpoint rule for
/// `int *F` consistent with the box scheme.
pub fn vortex_energy_flux(profile: &VortexProfile) -> EnergyFlux {
    let e2 = profile.epsilon * profile.epsilon;
    let density = |k: usize| {
        let f = profile.f[k];
        let v = 1.0 - f * f;
        let curv = v / (2.0 * e2);
        let c = profile.fp_node(k);
        e2 * curv * curv + 2.0 * c * c + v * v / (4.0 * e2)
    };
    let r = &profile.r_grid;
    let n = r.len();
    let mut energy = 0.0;
    for k in 0..n - 1 {
        let h = r[k + 1] - r[k];
        energy += 0.5 * h * (density(k) * r[k] + density(k + 1) * r[k + 1]);
    }
    energy *= 2.0 * PI;
    let flux = 2.0 * PI * (profile.a[n - 1] - profile.a[0]);
    let tail_estimate = 2.0 * PI * r[n - 1] * density(n - 1) * profile.epsilon;
    EnergyFlux { energy, flux, tail_estimate, tail_warning: tail_estimate > 1e-8 }
}

/// Residuals of the squared vortex identity and the discrete first-order system.
pub fn check_vortex_identity(profile: &VortexProfile) -> IdentityReport {
    let eps = profile.epsilon;
    let e2 = eps * eps;
    let r = &profile.r_grid;
    let n = r.len();
    let (mut sq, mut ef, mut ea) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..n - 1 {
        let h = r[k + 1] - r[k];
        let rm = 0.5 * (r[k] + r[k + 1]);
        let fm = 0.5 * (profile.f[k] + profile.f[k + 1]);
        let curv = (profile.a[k + 1] - profile.a[k]) / (h * rm);
        let v = 1.0 - fm * fm;
        sq = sq.max((e2 * curv * curv - v * v / (4.0 * e2)).abs());
        ea = ea.max((eps * ((profile.a[k + 1] - profile.a[k]) / h - rm * v / (2.0 * e2))).abs());
        let (g0, g1) = (profile.g_node(k), profile.g_node(k + 1));
        let abar = 0.5 * (profile.a[k] + profile.a[k + 1]);
        let rf = if g0 == 0.0 && g1 == 0.0 {
            0.0
        } else if g0 > 0.0 && g1 > 0.0 {
            eps * ((g1.ln() - g0.ln()) / h + abar / rm)
        } else {
            f64::INFINITY
        };
        ef = ef.max(rf.abs());
    }
    IdentityReport { squared_identity: sq, f_equation: ef, a_equation: ea }
}

/// Exponential decay rate of `1 - f^2`, in units of `1/eps`, from a least-squares
/// fit of `ln(1 - f^2)` against `r / eps` over `[8 eps, R_max - 4 eps]`.
pub fn fit_decay_rate(profile: &VortexProfile) -> f64 {
    let eps = profile.epsilon;
    let lo = 8.0 * eps;
    let hi = profile.r_max() - 4.0 * eps;
    let pts: Vec<(f64, f64)> = profile
        .r_grid
        .iter()
        .zip(&profile.f)
        .filter(|(r, f)| **r >= lo && **r <= hi && 1.0 - **f * **f > 0.0)
        .map(|(r, f)| (r / eps, (1.0 - f * f).ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let m = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    -slope
}
