//! Lattice Ginzburg-Landau equations on the Fermi tube, the obstruction space
//! and its projection, the Newton solve of the projected gauge-augmented
//! equations, and the outer balancing iteration on the normal field `v`.
//!
//! Fields live on a lattice: `phi` at nodes, the connection as link averages
//! `A_mu = theta_mu / h_mu`. The energy is
//! `sum_links c |e^{-i theta} phi_b - phi_a|^2 + sum_plaq c 2 (1 - cos Theta)
//! + sum_nodes c (1 - |phi|^2)^2`, with weights from the model metric, and the
//! residual is `N = W^{-1} grad E / 2`, which approximates `(b, h)`.
//! Gauge invariance of the lattice energy holds exactly, so `G^T grad E = 0`.

use crate::ansatz::{planted_vortex, quintic_step, ApproximateSolution, NormalField, TubeGrid};
use crate::error::{GlError, Result};
use crate::geometry::{assemble_jacobi, jacobi_operator, ModelManifold};
use crate::par;
use crate::sparse::{SparseLu, TripletMatrix};
use crate::vortex2d::VortexProfile;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Unknowns per node: `A_x, A_1, A_2, Re phi, Im phi`.
pub const NC: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Link(u8),
    Plaq(u8, u8),
    Pot,
}

#[derive(Debug, Clone, Copy)]
struct Elem {
    owner: usize,
    kind: Kind,
    dofs: [usize; 5],
    sgn: [f64; 4],
    c: f64,
    h: f64,
    /// Measure of the element in `M` divided by its fiber area.
    measure: f64,
}

struct Local {
    len: usize,
    val: f64,
    g: [f64; 5],
    hs: [[f64; 5]; 5],
}

impl Elem {
    fn eval(&self, x: &[f64], hess: bool) -> Local {
        let mut out = Local { len: 0, val: 0.0, g: [0.0; 5], hs: [[0.0; 5]; 5] };
        let c = self.c;
        match self.kind {
            Kind::Link(_) => {
                out.len = 5;
                let d = &self.dofs;
                let th = self.h * x[d[0]];
                let (ar, ai, br, bi) = (x[d[1]], x[d[2]], x[d[3]], x[d[4]]);
                let (sn, cs) = th.sin_cos();
                let qr = ar * br + ai * bi;
                let qi = ar * bi - ai * br;
                let rep = qr * cs + qi * sn;
                out.val = c * (ar * ar + ai * ai + br * br + bi * bi - 2.0 * rep);
                let h = self.h;
                out.g = [
                    -2.0 * c * h * (-qr * sn + qi * cs),
                    2.0 * c * (ar - (br * cs + bi * sn)),
                    2.0 * c * (ai - (bi * cs - br * sn)),
                    2.0 * c * (br - (ar * cs - ai * sn)),
                    2.0 * c * (bi - (ai * cs + ar * sn)),
                ];
                if hess {
                    let m = &mut out.hs;
                    m[0][0] = 2.0 * c * h * h * rep;
                    m[0][1] = -2.0 * c * h * (-br * sn + bi * cs);
                    m[0][2] = -2.0 * c * h * (-bi * sn - br * cs);
                    m[0][3] = -2.0 * c * h * (-ar * sn - ai * cs);
                    m[0][4] = -2.0 * c * h * (-ai * sn + ar * cs);
                    for i in 1..5 {
                        m[i][i] = 2.0 * c;
                    }
                    m[1][3] = -2.0 * c * cs;
                    m[1][4] = -2.0 * c * sn;
                    m[2][3] = 2.0 * c * sn;
                    m[2][4] = -2.0 * c * cs;
                    for i in 0..5 {
                        for j in 0..i {
                            m[i][j] = m[j][i];
                        }
                    }
                }
            }
            Kind::Plaq(..) => {
                out.len = 4;
                let th: f64 = (0..4).map(|l| self.sgn[l] * x[self.dofs[l]]).sum();
                let (sn, cs) = th.sin_cos();
                out.val = 2.0 * c * (1.0 - cs);
                for l in 0..4 {
                    out.g[l] = 2.0 * c * sn * self.sgn[l];
                    if hess {
                        for m in 0..4 {
                            out.hs[l][m] = 2.0 * c * cs * self.sgn[l] * self.sgn[m];
                        }
                    }
                }
            }
            Kind::Pot => {
                out.len = 2;
                let (ar, ai) = (x[self.dofs[0]], x[self.dofs[1]]);
                let q = 1.0 - ar * ar - ai * ai;
                out.val = c * q * q;
                out.g = [-4.0 * c * q * ar, -4.0 * c * q * ai, 0.0, 0.0, 0.0];
                if hess {
                    out.hs[0][0] = -4.0 * c * q + 8.0 * c * ar * ar;
                    out.hs[1][1] = -4.0 * c * q + 8.0 * c * ai * ai;
                    out.hs[0][1] = 8.0 * c * ar * ai;
                    out.hs[1][0] = out.hs[0][1];
                }
            }
        }
        out
    }
}

/// Compressed sparse rows.
#[derive(Debug, Clone, Default)]
pub struct Csr {
    pub n: usize,
    row_ptr: Vec<usize>,
    col: Vec<u32>,
    val: Vec<f64>,
}

impl Csr {
    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        par::for_each_chunk_mut(&mut y[..self.n], 2048, |b, chunk| {
            for (o, out) in chunk.iter_mut().enumerate() {
                let r = b * 2048 + o;
                let mut s = 0.0;
                for q in self.row_ptr[r]..self.row_ptr[r + 1] {
                    s += self.val[q] * x[self.col[q] as usize];
                }
                *out = s;
            }
        });
    }

    fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |q| (self.col[q] as usize, self.val[q]))
    }
}

/// Rows of one slice, sorted and with duplicates merged.
struct RowBlock {
    row_ptr: Vec<usize>,
    col: Vec<u32>,
    val: Vec<f64>,
}

fn compress(rows: usize, mut t: Vec<(u32, u32, f64)>) -> RowBlock {
    t.sort_unstable_by_key(|e| (e.0, e.1));
    let mut row_ptr = vec![0usize; rows + 1];
    let mut col = Vec::with_capacity(t.len() / 2);
    let mut val: Vec<f64> = Vec::with_capacity(t.len() / 2);
    let mut last: Option<(u32, u32)> = None;
    for (r, c, v) in t {
        if last == Some((r, c)) {
            *val.last_mut().unwrap() += v;
        } else {
            col.push(c);
            val.push(v);
            row_ptr[r as usize + 1] += 1;
            last = Some((r, c));
        }
    }
    for r in 0..rows {
        row_ptr[r + 1] += row_ptr[r];
    }
    RowBlock { row_ptr, col, val }
}

/// The lattice: element list, weights and free/fixed unknowns.
#[derive(Debug)]
pub struct Lattice {
    pub grid: TubeGrid,
    pub epsilon: f64,
    pub three_d: bool,
    hmu: [f64; 3],
    elems: Vec<Elem>,
    slice_elems: Vec<std::ops::Range<usize>>,
    /// Mass weights `W` per unknown.
    pub weight: Vec<f64>,
    pub free: Vec<bool>,
    /// Node volumes, the weights for the gauge scalar `u`.
    pub vol: Vec<f64>,
    pub interior: Vec<bool>,
    /// Converts `N` to `(eps |b|, |h|)` in an orthonormal frame.
    pub scale: Vec<f64>,
}

impl Lattice {
    /// Lattice on `grid` for the metric of `m` (the plane uses `nx = 1` and no `x` links).
    pub fn new(m: &ModelManifold, grid: TubeGrid, epsilon: f64) -> Result<Self> {
        let three_d = m.dimension() == 3;
        if !three_d && grid.nx != 1 {
            return Err(GlError::Config { path: "grid.nx".into(), message: "the plane has a single fiber".into() });
        }
        if grid.n < 5 {
            return Err(GlError::Config { path: "grid.n".into(), message: "need at least 5 fiber nodes".into() });
        }
        let n = grid.n;
        let nn = grid.len();
        let hx = grid.hx();
        let h = grid.h;
        let hmu = [hx, h, h];
        let eps = epsilon;
        let w_at = |x: f64, y: [f64; 2]| if three_d { m.warp(x, y).w } else { 1.0 };
        let cell = |w: f64| if three_d { hx * h * h * w.sqrt() } else { h * h };
        let measure = |w: f64| if three_d { hx * w.sqrt() } else { 1.0 };
        let interior: Vec<bool> = (0..nn)
            .map(|k| {
                let (_, i, j) = grid.split(k);
                i > 0 && j > 0 && i + 1 < n && j + 1 < n
            })
            .collect();
        let lat = LatticeIndex { grid, three_d };
        let mut weight = vec![0.0; nn * NC];
        let mut free = vec![false; nn * NC];
        let mut scale = vec![0.0; nn * NC];
        let mut vol = vec![0.0; nn];
        let per_node: Vec<Vec<Elem>> = par::map_range(nn, |k| {
            let (x, y) = grid.point(k);
            let mut out = Vec::with_capacity(7);
            let wn = w_at(x, y);
            out.push(Elem {
                owner: k,
                kind: Kind::Pot,
                dofs: [k * NC + 3, k * NC + 4, 0, 0, 0],
                sgn: [0.0; 4],
                c: cell(wn) / (4.0 * eps * eps),
                h: 0.0,
                measure: measure(wn),
            });
            let mid = |mu: usize| {
                let mut p = (x, y);
                match mu {
                    0 => p.0 += 0.5 * hx,
                    1 => p.1[0] += 0.5 * h,
                    _ => p.1[1] += 0.5 * h,
                }
                p
            };
            for mu in 0..3 {
                let Some(b) = lat.next(k, mu) else { continue };
                let (px, py) = mid(mu);
                let w = w_at(px, py);
                let g = if mu == 0 { 1.0 / w } else { 1.0 };
                out.push(Elem {
                    owner: k,
                    kind: Kind::Link(mu as u8),
                    dofs: [k * NC + mu, k * NC + 3, k * NC + 4, b * NC + 3, b * NC + 4],
                    sgn: [0.0; 4],
                    c: cell(w) * g / (hmu[mu] * hmu[mu]),
                    h: hmu[mu],
                    measure: measure(w),
                });
            }
            for (mu, nu) in [(0usize, 1usize), (0, 2), (1, 2)] {
                let (Some(kmu), Some(knu)) = (lat.next(k, mu), lat.next(k, nu)) else { continue };
                if lat.next(kmu, nu).is_none() || lat.next(knu, mu).is_none() {
                    continue;
                }
                let mut px = x;
                let mut py = y;
                for d in [mu, nu] {
                    match d {
                        0 => px += 0.5 * hx,
                        1 => py[0] += 0.5 * h,
                        _ => py[1] += 0.5 * h,
                    }
                }
                let w = w_at(px, py);
                let g = |d: usize| if d == 0 { 1.0 / w } else { 1.0 };
                out.push(Elem {
                    owner: k,
                    kind: Kind::Plaq(mu as u8, nu as u8),
                    dofs: [k * NC + mu, kmu * NC + nu, knu * NC + mu, k * NC + nu, 0],
                    sgn: [hmu[mu], hmu[nu], -hmu[mu], -hmu[nu]],
                    c: eps * eps * cell(w) * g(mu) * g(nu) / (hmu[mu] * hmu[nu]).powi(2),
                    h: 0.0,
                    measure: measure(w),
                });
            }
            out
        });
        for k in 0..nn {
            let (x, y) = grid.point(k);
            let wn = w_at(x, y);
            vol[k] = cell(wn);
            if interior[k] {
                for c in 3..5 {
                    free[k * NC + c] = true;
                    weight[k * NC + c] = vol[k];
                    scale[k * NC + c] = 1.0;
                }
            }
        }
        for e in per_node.iter().flatten() {
            if let Kind::Link(mu) = e.kind {
                let mu = mu as usize;
                let a = e.owner;
                let b = e.dofs[3] / NC;
                let d = a * NC + mu;
                let (px, py) = {
                    let (x, y) = grid.point(a);
                    match mu {
                        0 => (x + 0.5 * hx, y),
                        1 => (x, [y[0] + 0.5 * h, y[1]]),
                        _ => (x, [y[0], y[1] + 0.5 * h]),
                    }
                };
                let w = w_at(px, py);
                let g = if mu == 0 { 1.0 / w } else { 1.0 };
                if interior[a] || interior[b] {
                    free[d] = true;
                    weight[d] = eps * eps * cell(w) * g;
                    scale[d] = eps * g.sqrt();
                }
            }
        }
        let mut elems = Vec::with_capacity(per_node.iter().map(|v| v.len()).sum());
        let mut slice_elems = Vec::with_capacity(grid.nx);
        let f = grid.fiber_len();
        for s in 0..grid.nx {
            let start = elems.len();
            for list in &per_node[s * f..(s + 1) * f] {
                elems.extend_from_slice(list);
            }
            slice_elems.push(start..elems.len());
        }
        Ok(Self { grid, epsilon, three_d, hmu, elems, slice_elems, weight, free, vol, interior, scale })
    }

    fn index(&self) -> LatticeIndex {
        LatticeIndex { grid: self.grid, three_d: self.three_d }
    }

    pub fn dim(&self) -> usize {
        self.grid.len() * NC
    }

    pub fn slice_dofs(&self) -> usize {
        self.grid.fiber_len() * NC
    }

    pub fn slice_of_dof(&self, d: usize) -> usize {
        d / self.slice_dofs()
    }

    /// Total lattice energy.
    pub fn energy(&self, x: &[f64]) -> f64 {
        par::sum_range(self.elems.len(), |e| self.elems[e].eval(x, false).val)
    }

    fn neighbour_slices(&self, s: usize, back: bool) -> Vec<usize> {
        let nx = self.grid.nx;
        let o = if back { (s + nx - 1) % nx } else { (s + 1) % nx };
        if o == s || !self.three_d {
            vec![s]
        } else {
            vec![s, o]
        }
    }

    /// `grad E / 2` on free unknowns (zero elsewhere).
    pub fn half_gradient(&self, x: &[f64]) -> Vec<f64> {
        let sd = self.slice_dofs();
        let mut out = vec![0.0; self.dim()];
        par::for_each_chunk_mut(&mut out, sd, |s, chunk| {
            let base = s * sd;
            for t in self.neighbour_slices(s, true) {
                for e in &self.elems[self.slice_elems[t].clone()] {
                    if !e.dofs[..e_len(e)].iter().any(|&d| d >= base && d < base + sd) {
                        continue;
                    }
                    let l = e.eval(x, false);
                    for a in 0..l.len {
                        let d = e.dofs[a];
                        if d >= base && d < base + sd && self.free[d] {
                            chunk[d - base] += 0.5 * l.g[a];
                        }
                    }
                }
            }
        });
        out
    }

    /// Gauge generator at interior node `k` for the configuration `x`, scaled by `W`.
    fn generator(&self, k: usize, x: &[f64]) -> ([(usize, f64); 8], usize) {
        let mut out = [(0usize, 0.0f64); 8];
        let mut len = 0;
        let idx = self.index();
        out[len] = (k * NC + 3, -x[k * NC + 4] * self.weight[k * NC + 3]);
        len += 1;
        out[len] = (k * NC + 4, x[k * NC + 3] * self.weight[k * NC + 4]);
        len += 1;
        for mu in 0..3 {
            if mu == 0 && !self.three_d {
                continue;
            }
            if idx.next(k, mu).is_some() {
                let d = k * NC + mu;
                out[len] = (d, -self.weight[d] / self.hmu[mu]);
                len += 1;
            }
            if let Some(p) = idx.prev(k, mu) {
                let d = p * NC + mu;
                out[len] = (d, self.weight[d] / self.hmu[mu]);
                len += 1;
            }
        }
        (out, len)
    }

    /// `u = W_u^{-1} G_0^T W z / eps` at interior nodes.
    pub fn gauge_scalar(&self, x0: &[f64], z: &[f64]) -> Vec<f64> {
        let eps = self.epsilon;
        par::map_range(self.grid.len(), |k| {
            if !self.interior[k] {
                return 0.0;
            }
            let (g, len) = self.generator(k, x0);
            g[..len].iter().map(|(d, v)| v * z[*d]).sum::<f64>() / (self.vol[k] * eps)
        })
    }

    /// `(1/eps) W G_x u`.
    pub fn gauge_term(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let eps = self.epsilon;
        let mut out = vec![0.0; self.dim()];
        for k in 0..self.grid.len() {
            if !self.interior[k] || u[k] == 0.0 {
                continue;
            }
            let (g, len) = self.generator(k, x);
            for (d, v) in &g[..len] {
                out[*d] += u[k] * v / eps;
            }
        }
        out
    }

    /// `W_u^{-1} G_x^T W G_x u / eps^2`, the lattice form of `d*du + |phi|^2 u / eps^2`.
    pub fn gauge_elliptic(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let eps = self.epsilon;
        let mut gu = vec![0.0; self.dim()];
        for k in 0..self.grid.len() {
            if !self.interior[k] || u[k] == 0.0 {
                continue;
            }
            let (g, len) = self.generator(k, x);
            for (d, v) in &g[..len] {
                gu[*d] += u[k] * v / self.weight[*d];
            }
        }
        par::map_range(self.grid.len(), |k| {
            if !self.interior[k] {
                return 0.0;
            }
            let (g, len) = self.generator(k, x);
            g[..len].iter().map(|(d, v)| v * gu[*d]).sum::<f64>() / (self.vol[k] * eps * eps)
        })
    }

    /// `W^{-1} grad E / 2` scaled to `(eps |b|, |h|)` and maximised over free unknowns.
    pub fn scaled_sup(&self, wvec: &[f64]) -> f64 {
        par::max_range(self.dim(), |d| if self.free[d] { (wvec[d] / self.weight[d]).abs() * self.scale[d] } else { 0.0 })
    }

    /// Sup of a field perturbation in the same scaling.
    pub fn field_sup(&self, z: &[f64]) -> f64 {
        par::max_range(self.dim(), |d| if self.free[d] { z[d].abs() * self.scale[d] } else { 0.0 })
    }

    /// Jacobian of the `W`-scaled augmented residual at `x`, as sparse rows.
    pub fn assemble_jacobian(&self, x: &[f64], x0: &[f64], u: &[f64]) -> Csr {
        let sd = self.slice_dofs();
        let eps = self.epsilon;
        let f = self.grid.fiber_len();
        let blocks: Vec<RowBlock> = par::map_range(self.grid.nx, |s| {
            let base = s * sd;
            let inside = |d: usize| d >= base && d < base + sd;
            let mut t: Vec<(u32, u32, f64)> = Vec::with_capacity(sd * 40);
            for sl in self.neighbour_slices(s, true) {
                for e in &self.elems[self.slice_elems[sl].clone()] {
                    let len = e_len(e);
                    if !e.dofs[..len].iter().any(|&d| inside(d)) {
                        continue;
                    }
                    let l = e.eval(x, true);
                    for a in 0..len {
                        let r = e.dofs[a];
                        if !inside(r) || !self.free[r] {
                            continue;
                        }
                        for b in 0..len {
                            let c = e.dofs[b];
                            if self.free[c] && l.hs[a][b] != 0.0 {
                                t.push(((r - base) as u32, c as u32, 0.5 * l.hs[a][b]));
                            }
                        }
                    }
                }
            }
            for sl in self.neighbour_slices(s, false) {
                for k in sl * f..(sl + 1) * f {
                    if !self.interior[k] {
                        continue;
                    }
                    let (gx, lx) = self.generator(k, x);
                    let (g0, l0) = self.generator(k, x0);
                    let fac = 1.0 / (eps * eps * self.vol[k]);
                    for (r, vr) in &gx[..lx] {
                        if !inside(*r) {
                            continue;
                        }
                        for (c, vc) in &g0[..l0] {
                            t.push(((r - base) as u32, *c as u32, fac * vr * vc));
                        }
                    }
                }
            }
            for k in s * f..(s + 1) * f {
                let d3 = k * NC + 3;
                if self.interior[k] && u[k] != 0.0 {
                    let v = u[k] * self.weight[d3] / eps;
                    t.push(((d3 - base) as u32, (d3 + 1) as u32, -v));
                    t.push(((d3 + 1 - base) as u32, d3 as u32, v));
                }
            }
            for d in base..base + sd {
                if !self.free[d] {
                    t.push(((d - base) as u32, d as u32, 1.0));
                }
            }
            compress(sd, t)
        });
        let nnz: usize = blocks.iter().map(|b| b.val.len()).sum();
        let mut row_ptr = Vec::with_capacity(self.dim() + 1);
        let mut col = Vec::with_capacity(nnz);
        let mut val = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for b in blocks {
            let off = col.len();
            row_ptr.extend(b.row_ptr[1..].iter().map(|p| p + off));
            col.extend(b.col);
            val.extend(b.val);
        }
        Csr { n: self.dim(), row_ptr, col, val }
    }

    /// Element energies with their centres `(x, y)` and fiber measure factor.
    fn element_energies(&self, x: &[f64]) -> Vec<(usize, [f64; 3], f64, f64)> {
        let g = self.grid;
        par::map_range(self.elems.len(), |q| {
            let e = &self.elems[q];
            let (px, py) = g.point(e.owner);
            let mut p = [px, py[0], py[1]];
            let hm = [self.hmu[0], self.hmu[1], self.hmu[2]];
            match e.kind {
                Kind::Link(mu) => p[mu as usize] += 0.5 * hm[mu as usize],
                Kind::Plaq(mu, nu) => {
                    p[mu as usize] += 0.5 * hm[mu as usize];
                    p[nu as usize] += 0.5 * hm[nu as usize];
                }
                Kind::Pot => {}
            }
            (g.split(e.owner).0, p, e.eval(x, false).val, e.measure)
        })
    }
}

fn e_len(e: &Elem) -> usize {
    match e.kind {
        Kind::Link(_) => 5,
        Kind::Plaq(..) => 4,
        Kind::Pot => 2,
    }
}

#[derive(Debug, Clone, Copy)]
struct LatticeIndex {
    grid: TubeGrid,
    three_d: bool,
}

impl LatticeIndex {
    fn next(&self, k: usize, mu: usize) -> Option<usize> {
        let g = &self.grid;
        let (s, i, j) = g.split(k);
        match mu {
            0 => self.three_d.then(|| g.index((s + 1) % g.nx, i, j)),
            1 => (i + 1 < g.n).then(|| g.index(s, i + 1, j)),
            _ => (j + 1 < g.n).then(|| g.index(s, i, j + 1)),
        }
    }

    fn prev(&self, k: usize, mu: usize) -> Option<usize> {
        let g = &self.grid;
        let (s, i, j) = g.split(k);
        match mu {
            0 => self.three_d.then(|| g.index((s + g.nx - 1) % g.nx, i, j)),
            1 => (i > 0).then(|| g.index(s, i - 1, j)),
            _ => (j > 0).then(|| g.index(s, i, j - 1)),
        }
    }
}

/// Correction of a relaxed lattice vortex relative to the planted one, on a
/// single fiber; translated with the vortex when building lattice ansatze.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiberCorrection {
    pub n: usize,
    pub h: f64,
    /// Per fiber node: `A_1, A_2, Re phi, Im phi`.
    pub data: Vec<[f64; 4]>,
}

impl FiberCorrection {
    /// Bilinear sample of component `c` at `p`; `A_1`, `A_2` live at link midpoints.
    pub fn sample(&self, c: usize, p: [f64; 2]) -> f64 {
        let half = ((self.n - 1) / 2) as f64;
        let mut q = [p[0] / self.h + half, p[1] / self.h + half];
        if c < 2 {
            q[c] -= 0.5;
        }
        if q[0] < 0.0 || q[1] < 0.0 || q[0] > (self.n - 1) as f64 || q[1] > (self.n - 1) as f64 {
            return 0.0;
        }
        let i = (q[0].floor() as usize).min(self.n - 2);
        let j = (q[1].floor() as usize).min(self.n - 2);
        let (s, t) = (q[0] - i as f64, q[1] - j as f64);
        let at = |a: usize, b: usize| self.data[a * self.n + b][c];
        at(i, j) * (1.0 - s) * (1.0 - t) + at(i + 1, j) * s * (1.0 - t) + at(i, j + 1) * (1.0 - s) * t + at(i + 1, j + 1) * s * t
    }
}

fn simpson<F: Fn(f64) -> f64>(f: F) -> f64 {
    (f(0.0) + 4.0 * f(0.5) + f(1.0)) / 6.0
}

/// Lattice version of the ansatz: link averages of the planted connection
/// along `z = y - v(x)`, plus an optional translated lattice correction.
pub fn lattice_ansatz(
    lat: &Lattice,
    profile: &VortexProfile,
    apx: &ApproximateSolution,
    correction: Option<&FiberCorrection>,
) -> Vec<f64> {
    let g = lat.grid;
    let h = g.h;
    let hx = g.hx();
    let cut = apx.cutoff;
    let f = g.fiber_len();
    // v and v' at slice starts, midpoints and ends
    let vx: Vec<[([f64; 2], [f64; 2]); 3]> = (0..g.nx)
        .map(|s| {
            let x = g.x(s);
            [apx.v.eval(x), apx.v.eval(x + 0.5 * hx), apx.v.eval(x + hx)]
        })
        .collect();
    let mut x0 = vec![0.0; lat.dim()];
    par::for_each_chunk_mut(&mut x0, f * NC, |s, chunk| {
        let v = apx.v.v[s];
        for q in 0..f {
            let k = s * f + q;
            let (_, y) = g.point(k);
            let z = [y[0] - v[0], y[1] - v[1]];
            let b = |p: [f64; 2]| planted_vortex(profile, p, cut).b;
            let out = &mut chunk[q * NC..(q + 1) * NC];
            let p = planted_vortex(profile, z, cut);
            out[3] = p.psi.re;
            out[4] = p.psi.im;
            out[1] = simpson(|t| b([z[0] + t * h, z[1]])[0]);
            out[2] = simpson(|t| b([z[0], z[1] + t * h])[1]);
            if lat.three_d {
                let vv = &vx[s];
                let integrand = |m: usize| {
                    let (vm, dvm) = vv[m];
                    let bb = b([y[0] - vm[0], y[1] - vm[1]]);
                    -(dvm[0] * bb[0] + dvm[1] * bb[1])
                };
                out[0] = (integrand(0) + 4.0 * integrand(1) + integrand(2)) / 6.0;
            }
            if let Some(cr) = correction {
                out[1] += cr.sample(0, [z[0] + 0.5 * h, z[1]]);
                out[2] += cr.sample(1, [z[0], z[1] + 0.5 * h]);
                out[3] += cr.sample(2, z);
                out[4] += cr.sample(3, z);
            }
        }
    });
    x0
}

/// Cutoff `kappa` of the obstruction space: 1 up to `sqrt(eps)`, 0 beyond `2 sqrt(eps)`.
pub fn obstruction_cutoff(r: f64, eps: f64) -> f64 {
    let a = eps.sqrt();
    1.0 - quintic_step(r, a, 2.0 * a).0
}

/// The obstruction space `E`: per slice and normal direction `w`, the pair
/// `kappa (F(w, .), D_w phi)` of the planted vortex.
#[derive(Debug, Clone)]
pub struct ObstructionProjector {
    pub nx: usize,
    /// Column `2 s + rho` of `E` (sparse).
    cols: Vec<Vec<(usize, f64)>>,
    /// Same columns multiplied by `W`.
    wcols: Vec<Vec<(usize, f64)>>,
    pub gram: Vec<[[f64; 2]; 2]>,
    gram_inv: Vec<[[f64; 2]; 2]>,
    pub condition: Vec<f64>,
}

impl ObstructionProjector {
    pub fn new(lat: &Lattice, profile: &VortexProfile, apx: &ApproximateSolution) -> Result<Self> {
        let g = lat.grid;
        let eps = lat.epsilon;
        let h = g.h;
        let f = g.fiber_len();
        let cols_per_slice: Vec<[Vec<(usize, f64)>; 2]> = par::map_range(g.nx, |s| {
            let v = apx.v.v[s];
            let mut out = [Vec::new(), Vec::new()];
            for q in 0..f {
                let k = s * f + q;
                let (_, y) = g.point(k);
                let rn = y[0].hypot(y[1]);
                if rn >= 2.0 * eps.sqrt() + h {
                    continue;
                }
                let z = [y[0] - v[0], y[1] - v[1]];
                let kap = obstruction_cutoff(rn, eps);
                let p = planted_vortex(profile, z, apx.cutoff);
                let links = [[y[0] + 0.5 * h, y[1]], [y[0], y[1] + 0.5 * h]];
                let fb: Vec<(f64, f64)> = links
                    .iter()
                    .map(|m| {
                        let pm = planted_vortex(profile, [m[0] - v[0], m[1] - v[1]], apx.cutoff);
                        (obstruction_cutoff(m[0].hypot(m[1]), eps), pm.curvature)
                    })
                    .collect();
                for (rho, col) in out.iter_mut().enumerate() {
                    let w = if rho == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
                    // F(w, e_1) = -w_2 F_12, F(w, e_2) = w_1 F_12
                    let a1 = fb[0].0 * (-w[1] * fb[0].1);
                    let a2 = fb[1].0 * (w[0] * fb[1].1);
                    let dw = p.dpsi[0] * w[0] + p.dpsi[1] * w[1];
                    for (d, val) in [(k * NC + 1, a1), (k * NC + 2, a2), (k * NC + 3, kap * dw.re), (k * NC + 4, kap * dw.im)] {
                        if lat.free[d] && val != 0.0 {
                            col.push((d, val));
                        }
                    }
                }
            }
            out
        });
        let mut cols = Vec::with_capacity(2 * g.nx);
        for [a, b] in cols_per_slice {
            cols.push(a);
            cols.push(b);
        }
        let wcols: Vec<Vec<(usize, f64)>> = cols.iter().map(|c| c.iter().map(|(d, v)| (*d, v * lat.weight[*d])).collect()).collect();
        let mut gram = Vec::with_capacity(g.nx);
        let mut gram_inv = Vec::with_capacity(g.nx);
        let mut condition = Vec::with_capacity(g.nx);
        for s in 0..g.nx {
            let dot = |a: &[(usize, f64)], b: &[(usize, f64)]| -> f64 {
                let mut bi = b.iter().peekable();
                let mut sum = 0.0;
                for (d, v) in a {
                    while let Some((e, _)) = bi.peek() {
                        if e < d {
                            bi.next();
                        } else {
                            break;
                        }
                    }
                    if let Some((e, w)) = bi.peek() {
                        if e == d {
                            sum += v * w;
                        }
                    }
                }
                sum
            };
            let m = [
                [dot(&cols[2 * s], &wcols[2 * s]), dot(&cols[2 * s], &wcols[2 * s + 1])],
                [dot(&cols[2 * s + 1], &wcols[2 * s]), dot(&cols[2 * s + 1], &wcols[2 * s + 1])],
            ];
            let tr = m[0][0] + m[1][1];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let disc = ((0.5 * tr).powi(2) - det).max(0.0).sqrt();
            let (lmax, lmin) = (0.5 * tr + disc, 0.5 * tr - disc);
            let cond = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
            if !(cond < 1e8) {
                return Err(GlError::GramSingular { slice: s, condition: cond });
            }
            gram.push(m);
            gram_inv.push([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]);
            condition.push(cond);
        }
        Ok(Self { nx: g.nx, cols, wcols, gram, gram_inv, condition })
    }

    /// `E^T W z` per column.
    pub fn moments(&self, z: &[f64]) -> Vec<f64> {
        self.wcols.iter().map(|c| c.iter().map(|(d, v)| v * z[*d]).sum()).collect()
    }

    /// `Pi(z) = (E^T W E)^{-1} E^T W z`, laid out as `2 s + rho`.
    pub fn coefficients(&self, z: &[f64]) -> Vec<f64> {
        let m = self.moments(z);
        let mut out = vec![0.0; m.len()];
        for s in 0..self.nx {
            let gi = &self.gram_inv[s];
            out[2 * s] = gi[0][0] * m[2 * s] + gi[0][1] * m[2 * s + 1];
            out[2 * s + 1] = gi[1][0] * m[2 * s] + gi[1][1] * m[2 * s + 1];
        }
        out
    }

    /// Adds `alpha E c` to `out`.
    pub fn add_span(&self, c: &[f64], alpha: f64, out: &mut [f64]) {
        for (col, cv) in self.cols.iter().zip(c) {
            for (d, v) in col {
                out[*d] += alpha * cv * v;
            }
        }
    }

    /// Adds `alpha W E c` to `out`.
    pub fn add_weighted_span(&self, c: &[f64], alpha: f64, out: &mut [f64]) {
        for (col, cv) in self.wcols.iter().zip(c) {
            for (d, v) in col {
                out[*d] += alpha * cv * v;
            }
        }
    }

    /// `P z`.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let c = self.coefficients(z);
        let mut out = vec![0.0; z.len()];
        self.add_span(&c, 1.0, &mut out);
        out
    }

    /// `((I - P) z, Pi(z))`.
    pub fn project(&self, z: &[f64], l0: f64) -> (Vec<f64>, NormalField) {
        let c = self.coefficients(z);
        let mut out = z.to_vec();
        self.add_span(&c, -1.0, &mut out);
        (out, coeffs_to_field(&c, l0))
    }

    pub fn column(&self, q: usize) -> &[(usize, f64)] {
        &self.cols[q]
    }
}

fn coeffs_to_field(c: &[f64], l0: f64) -> NormalField {
    NormalField { l0, v: c.chunks(2).map(|p| [p[0], p[1]]).collect() }
}

fn field_to_coeffs(v: &NormalField) -> Vec<f64> {
    v.v.iter().flat_map(|p| [p[0], p[1]]).collect()
}

/// Block-diagonal preconditioner for the bordered system. Each slice block
/// `[K + sigma W, -W E; -E^T W, 0]` is solved with a sparse LU of the shifted
/// operator and a 2 x 2 Schur complement for the border; identical slices
/// share one factorization.
#[derive(Debug)]
pub struct SlicePreconditioner {
    blocks: Vec<SliceBlock>,
    map: Vec<usize>,
    sd: usize,
}

#[derive(Debug)]
struct SliceBlock {
    lu: SparseLu,
    /// Symmetric equilibration of the shifted block.
    sc: Vec<f64>,
    /// Local `W E` columns.
    wcols: [Vec<(usize, f64)>; 2],
    /// `(K + sigma W)^{-1} W E`.
    y: [Vec<f64>; 2],
    schur_inv: [[f64; 2]; 2],
}

impl SliceBlock {
    fn solve_shifted(&self, b: &mut [f64]) {
        b.iter_mut().zip(&self.sc).for_each(|(v, f)| *v *= f);
        self.lu.solve_in_place(b);
        b.iter_mut().zip(&self.sc).for_each(|(v, f)| *v *= f);
    }
}

impl SlicePreconditioner {
    /// `shift` is `sigma` in units of the residual operator (`W^{-1} K`).
    pub fn build(jac: &Csr, proj: &ObstructionProjector, lat: &Lattice, shift: f64) -> Result<Self> {
        let nx = proj.nx;
        let sd = lat.slice_dofs();
        let local = |s: usize| -> (Vec<(usize, usize, f64)>, [Vec<(usize, f64)>; 2], f64) {
            let base = s * sd;
            let mut t = Vec::new();
            let mut mx = 0.0f64;
            for r in 0..sd {
                for (c, v) in jac.row(base + r) {
                    if c >= base && c < base + sd {
                        t.push((r, c - base, v));
                        mx = mx.max(v.abs());
                    }
                }
                if lat.free[base + r] {
                    t.push((r, r, shift * lat.weight[base + r]));
                }
            }
            let w = [0, 1].map(|rho| proj.wcols[2 * s + rho].iter().map(|(d, v)| (d - base, *v)).collect::<Vec<_>>());
            (t, w, mx)
        };
        let (first, first_w, scale) = local(0);
        let mut map = vec![0usize; nx];
        let mut pending = vec![(first.clone(), first_w.clone())];
        let close = |a: &[(usize, f64)], b: &[(usize, f64)], tol: f64| a.len() == b.len() && a.iter().zip(b).all(|(p, q)| p.0 == q.0 && (p.1 - q.1).abs() <= tol);
        for s in 1..nx {
            let (t, w, _) = local(s);
            let wmax = first_w.iter().flatten().fold(0.0f64, |m, e| m.max(e.1.abs()));
            let same = t.len() == first.len()
                && t.iter().zip(&first).all(|(a, b)| a.0 == b.0 && a.1 == b.1 && (a.2 - b.2).abs() <= 1e-12 * scale)
                && (0..2).all(|r| close(&w[r], &first_w[r], 1e-12 * wmax));
            if same {
                map[s] = 0;
            } else {
                map[s] = pending.len();
                pending.push((t, w));
            }
        }
        let blocks: Vec<Result<SliceBlock>> = par::map_slice(&pending, |(t, w)| {
            let mut sc = vec![0.0; sd];
            for (r, c, v) in t {
                if r == c {
                    sc[*r] += v;
                }
            }
            for v in sc.iter_mut() {
                *v = if *v != 0.0 { 1.0 / v.abs().sqrt() } else { 1.0 };
            }
            let mut m = TripletMatrix::with_capacity(sd, t.len());
            for (r, c, v) in t {
                m.push(*r, *c, v * sc[*r] * sc[*c]);
            }
            let lu = SparseLu::factor(&m)?;
            let mut blk = SliceBlock { lu, sc, wcols: w.clone(), y: [vec![0.0; sd], vec![0.0; sd]], schur_inv: [[0.0; 2]; 2] };
            for rho in 0..2 {
                let mut b = vec![0.0; sd];
                for (d, v) in &w[rho] {
                    b[*d] = *v;
                }
                blk.solve_shifted(&mut b);
                blk.y[rho] = b;
            }
            let mut sm = [[0.0; 2]; 2];
            for (a, row) in sm.iter_mut().enumerate() {
                for (b, e) in row.iter_mut().enumerate() {
                    *e = w[a].iter().map(|(d, v)| v * blk.y[b][*d]).sum();
                }
            }
            let det = sm[0][0] * sm[1][1] - sm[0][1] * sm[1][0];
            if det.abs() < 1e-300 {
                return Err(GlError::LinearSolver("singular border Schur complement".into()));
            }
            blk.schur_inv = [[sm[1][1] / det, -sm[0][1] / det], [-sm[1][0] / det, sm[0][0] / det]];
            Ok(blk)
        });
        let blocks = blocks.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks, map, sd })
    }

    pub fn distinct_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Applies the inverse to `[z (nx * sd); c (2 nx)]`.
    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let nx = self.map.len();
        let sd = self.sd;
        let parts: Vec<(Vec<f64>, [f64; 2])> = par::map_range(nx, |s| {
            let blk = &self.blocks[self.map[s]];
            let mut x = r[s * sd..(s + 1) * sd].to_vec();
            blk.solve_shifted(&mut x);
            let q = [r[nx * sd + 2 * s], r[nx * sd + 2 * s + 1]];
            // x = K'^{-1} r + Y c with -E^T W x = q
            let m: [f64; 2] = [0, 1].map(|a| blk.wcols[a].iter().map(|(d, v)| v * x[*d]).sum::<f64>() + q[a]);
            let c = [
                -(blk.schur_inv[0][0] * m[0] + blk.schur_inv[0][1] * m[1]),
                -(blk.schur_inv[1][0] * m[0] + blk.schur_inv[1][1] * m[1]),
            ];
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += blk.y[0][i] * c[0] + blk.y[1][i] * c[1];
            }
            (x, c)
        });
        let mut out = vec![0.0; r.len()];
        for (s, (x, c)) in parts.into_iter().enumerate() {
            out[s * sd..(s + 1) * sd].copy_from_slice(&x);
            out[nx * sd + 2 * s] = c[0];
            out[nx * sd + 2 * s + 1] = c[1];
        }
        out
    }
}

/// Default preconditioner shift, a fraction of the spectral gap `~ 0.78 / eps^2`.
pub fn default_shift(eps: f64) -> f64 {
    0.2 / (eps * eps)
}

/// Outcome of a GMRES solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresInfo {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Right-preconditioned restarted GMRES for `A x = b` from `x = 0`.
pub fn gmres(
    a: &dyn Fn(&[f64]) -> Vec<f64>,
    m: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    tol: f64,
    restart: usize,
    maxiter: usize,
) -> (Vec<f64>, GmresInfo) {
    let n = b.len();
    let dot = |x: &[f64], y: &[f64]| par::sum_range(n, |i| x[i] * y[i]);
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return (x, GmresInfo { iterations: 0, relative_residual: 0.0 });
    }
    let mut total = 0;
    let mut rel = 1.0;
    while total < maxiter {
        let ax = a(&x);
        let r: Vec<f64> = (0..n).map(|i| b[i] - ax[i]).collect();
        let beta = dot(&r, &r).sqrt();
        rel = beta / bnorm;
        if rel <= tol {
            break;
        }
        let mut vs: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut zs: Vec<Vec<f64>> = Vec::new();
        let mut hmat = vec![vec![0.0; restart]; restart + 1];
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut gvec = vec![0.0; restart + 1];
        gvec[0] = beta;
        let mut k = 0;
        while k < restart && total < maxiter {
            let z = m(&vs[k]);
            let mut w = a(&z);
            zs.push(z);
            for (i, v) in vs.iter().enumerate() {
                let hij = dot(&w, v);
                hmat[i][k] = hij;
                w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= hij * vi);
            }
            let hn = dot(&w, &w).sqrt();
            hmat[k + 1][k] = hn;
            for i in 0..k {
                let t = cs[i] * hmat[i][k] + sn[i] * hmat[i + 1][k];
                hmat[i + 1][k] = -sn[i] * hmat[i][k] + cs[i] * hmat[i + 1][k];
                hmat[i][k] = t;
            }
            let den = hmat[k][k].hypot(hmat[k + 1][k]);
            cs[k] = hmat[k][k] / den;
            sn[k] = hmat[k + 1][k] / den;
            hmat[k][k] = den;
            hmat[k + 1][k] = 0.0;
            gvec[k + 1] = -sn[k] * gvec[k];
            gvec[k] *= cs[k];
            k += 1;
            total += 1;
            rel = gvec[k].abs() / bnorm;
            if rel <= tol || hn == 0.0 {
                break;
            }
            vs.push(w.iter().map(|v| v / hn).collect());
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| hmat[i][j] * y[j]).sum();
            y[i] = (gvec[i] - s) / hmat[i][i];
        }
        for (i, z) in zs.iter().enumerate().take(k) {
            x.iter_mut().zip(z).for_each(|(xi, zi)| *xi += y[i] * zi);
        }
        if rel <= tol {
            let ax = a(&x);
            let r2: f64 = (0..n).map(|i| (b[i] - ax[i]).powi(2)).sum::<f64>().sqrt();
            rel = r2 / bnorm;
            if rel <= tol * 10.0 {
                break;
            }
        }
    }
    (x, GmresInfo { iterations: total, relative_residual: rel })
}

/// Options of the Newton solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InnerOptions {
    /// Target for the projected residual in the `(eps |b|, |h|)` sup norm.
    pub tol: f64,
    pub max_newton: usize,
    pub gmres_tol: f64,
    pub gmres_restart: usize,
    pub gmres_maxiter: usize,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_newton: 20, gmres_tol: 1e-10, gmres_restart: 40, gmres_maxiter: 400 }
    }
}

/// A lattice, an ansatz on it and the obstruction space of that ansatz.
#[derive(Debug, Clone)]
pub struct GluingProblem {
    pub lattice: Arc<Lattice>,
    pub apx: ApproximateSolution,
    pub x0: Vec<f64>,
    pub projector: ObstructionProjector,
}

impl GluingProblem {
    pub fn new(
        lattice: Arc<Lattice>,
        profile: &VortexProfile,
        apx: ApproximateSolution,
        correction: Option<&FiberCorrection>,
    ) -> Result<Self> {
        let x0 = lattice_ansatz(&lattice, profile, &apx, correction);
        let projector = ObstructionProjector::new(&lattice, profile, &apx)?;
        Ok(Self { lattice, apx, x0, projector })
    }

    /// `W`-scaled augmented residual `grad E / 2 + (1/eps) W G u` at `x0 + z`.
    pub fn augmented(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let lat = &self.lattice;
        let x: Vec<f64> = self.x0.iter().zip(z).map(|(a, b)| a + b).collect();
        let u = lat.gauge_scalar(&self.x0, z);
        let mut r = lat.half_gradient(&x);
        let gt = lat.gauge_term(&x, &u);
        r.iter_mut().zip(&gt).for_each(|(a, b)| *a += b);
        (r, u)
    }

    /// `W^{-1}` applied to a `W`-scaled vector (zero on fixed unknowns).
    pub fn unweight(&self, r: &[f64]) -> Vec<f64> {
        let lat = &self.lattice;
        (0..r.len()).map(|d| if lat.free[d] { r[d] / lat.weight[d] } else { 0.0 }).collect()
    }
}

/// Projected solution `(A + a, phi + f)` with the balancing data.
#[derive(Debug, Clone)]
pub struct CorrectedSolution {
    pub problem: Arc<GluingProblem>,
    /// Correction `z = (a, f)` on the lattice.
    pub z: Vec<f64>,
    /// The corrected configuration `x0 + z`.
    pub x: Vec<f64>,
    /// Gauge scalar `u` per node.
    pub u: Vec<f64>,
    /// Multiplier `Pi` of the augmented residual, i.e. the balancing map.
    pub balancing: NormalField,
    /// Newton trace of the projected residual.
    pub trace: Vec<f64>,
    pub gmres_iterations: Vec<usize>,
    pub projected_residual: f64,
    /// Sup of `(eps |b|, |h|)` for the corrected pair, without projection.
    pub full_residual: f64,
    pub gauge_norm: f64,
    pub correction_norm: f64,
    pub preconditioner: Arc<SlicePreconditioner>,
}

impl CorrectedSolution {
    /// Residual of `R_aug = P R_aug` (decomposition consistency).
    pub fn decomposition_defect(&self) -> f64 {
        let (r, _) = self.problem.augmented(&self.z);
        let rn = self.problem.unweight(&r);
        let pr = self.problem.projector.apply(&rn);
        let diff: Vec<f64> = rn.iter().zip(&pr).map(|(a, b)| a - b).collect();
        let w: Vec<f64> = diff.iter().zip(&self.problem.lattice.weight).map(|(a, w)| a * w).collect();
        self.problem.lattice.scaled_sup(&w)
    }

    /// `phi` of the corrected pair.
    pub fn phi(&self) -> Vec<Complex64> {
        (0..self.problem.lattice.grid.len()).map(|k| Complex64::new(self.x[k * NC + 3], self.x[k * NC + 4])).collect()
    }
}

/// Newton iteration on the projected augmented equations
/// `R_aug(z) = E c`, `E^T W z = 0`.
pub fn inner_solve(
    problem: Arc<GluingProblem>,
    opts: &InnerOptions,
    warm: Option<&[f64]>,
    precond: Option<Arc<SlicePreconditioner>>,
) -> Result<CorrectedSolution> {
    let lat = problem.lattice.clone();
    let proj = &problem.projector;
    let n = lat.dim();
    let nc = 2 * proj.nx;
    let mut z = match warm {
        Some(w) => (0..n).map(|d| if lat.free[d] { w[d] } else { 0.0 }).collect(),
        None => vec![0.0; n],
    };
    let state = |z: &[f64]| {
        let (r, u) = problem.augmented(z);
        let rn = problem.unweight(&r);
        let c = proj.coefficients(&rn);
        let mut res = r;
        proj.add_weighted_span(&c, -1.0, &mut res);
        let constraint = proj.moments(z);
        (res, c, u, constraint)
    };
    let measure = |res: &[f64], cons: &[f64]| lat.scaled_sup(res).max(cons.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let (mut res, mut c, mut u, mut cons) = state(&z);
    let mut rho = measure(&res, &cons);
    let rho0 = rho;
    let mut trace = vec![rho];
    let mut gits = Vec::new();
    let mut pre = precond;
    let mut iter = 0;
    while rho > opts.tol {
        if iter >= opts.max_newton {
            return Err(GlError::ProjLoss { residual: rho, tol: opts.tol });
        }
        iter += 1;
        let x: Vec<f64> = problem.x0.iter().zip(&z).map(|(a, b)| a + b).collect();
        let jac = lat.assemble_jacobian(&x, &problem.x0, &u);
        if pre.is_none() {
            pre = Some(Arc::new(SlicePreconditioner::build(&jac, proj, &lat, default_shift(lat.epsilon))?));
        }
        let p = pre.clone().unwrap();
        let apply = |v: &[f64]| -> Vec<f64> {
            let mut y = vec![0.0; n + nc];
            jac.apply(&v[..n], &mut y[..n]);
            proj.add_weighted_span(&v[n..], -1.0, &mut y[..n]);
            let m = proj.moments(&v[..n]);
            for q in 0..nc {
                y[n + q] = -m[q];
            }
            y
        };
        let mut rhs = vec![0.0; n + nc];
        for d in 0..n {
            rhs[d] = -res[d];
        }
        for q in 0..nc {
            rhs[n + q] = cons[q];
        }
        let (dx, info) = gmres(&apply, &|v| p.apply(v), &rhs, opts.gmres_tol, opts.gmres_restart, opts.gmres_maxiter);
        gits.push(info.iterations);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..8 {
            let zt: Vec<f64> = z.iter().zip(&dx[..n]).map(|(a, b)| a + alpha * b).collect();
            let (rt, ct, ut, kt) = state(&zt);
            let rt_norm = measure(&rt, &kt);
            if rt_norm.is_finite() && (rt_norm < rho || alpha < 0.02) {
                z = zt;
                res = rt;
                c = ct;
                u = ut;
                cons = kt;
                rho = rt_norm;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        trace.push(rho);
        if !accepted || !rho.is_finite() || rho > 1e6 * rho0.max(1e-300) {
            return Err(GlError::NewtonDiverged { trace });
        }
    }
    let x: Vec<f64> = problem.x0.iter().zip(&z).map(|(a, b)| a + b).collect();
    let full = lat.scaled_sup(&lat.half_gradient(&x));
    let preconditioner = match pre {
        Some(p) => p,
        None => {
            let jac = lat.assemble_jacobian(&x, &problem.x0, &u);
            Arc::new(SlicePreconditioner::build(&jac, proj, &lat, default_shift(lat.epsilon))?)
        }
    };
    let gauge_norm = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let correction_norm = lat.field_sup(&z);
    let l0 = problem.apx.v.l0;
    Ok(CorrectedSolution {
        problem,
        x,
        u,
        balancing: coeffs_to_field(&c, l0),
        trace,
        gmres_iterations: gits,
        projected_residual: rho,
        full_residual: full,
        gauge_norm,
        correction_norm,
        preconditioner,
        z,
    })
}

/// Norms of `u` and of the elliptic identity it satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaugeReport {
    pub u_sup: f64,
    /// `sup |d*du + |phi|^2 u / eps^2 - (E^T W-pairing of the multiplier)|`, zero for exact solves.
    pub identity_residual: f64,
    pub elliptic_sup: f64,
}

/// `||u||` and the identity `G^T W R_aug = G^T W G u / eps`, which follows
/// from gauge invariance of the energy.
pub fn gauge_residual(cs: &CorrectedSolution) -> GaugeReport {
    gauge_residual_with(cs, &cs.u)
}

/// As [`gauge_residual`] with `u` replaced, for testing the detector.
pub fn gauge_residual_with(cs: &CorrectedSolution, u: &[f64]) -> GaugeReport {
    let p = &cs.problem;
    let lat = &p.lattice;
    let ell = lat.gauge_elliptic(&cs.x, u);
    // G^T W E c / (eps vol), the source of the elliptic equation
    let mut ec = vec![0.0; lat.dim()];
    p.projector.add_span(&field_to_coeffs(&cs.balancing), 1.0, &mut ec);
    let eps = lat.epsilon;
    let src: Vec<f64> = (0..lat.grid.len())
        .map(|k| {
            if !lat.interior[k] {
                return 0.0;
            }
            let (g, len) = lat.generator(k, &cs.x);
            g[..len].iter().map(|(d, v)| v * ec[*d]).sum::<f64>() / (lat.vol[k] * eps)
        })
        .collect();
    let identity = ell.iter().zip(&src).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    GaugeReport {
        u_sup: u.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        identity_residual: identity,
        elliptic_sup: ell.iter().fold(0.0f64, |m, v| m.max(v.abs())),
    }
}

/// Grid and solver settings of a gluing run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GluingSettings {
    /// Fiber half-width in units of `eps` (at least 12).
    pub tube_over_eps: f64,
    /// Fiber spacing in units of `eps`.
    pub h_over_eps: f64,
    /// Number of slices along `S`.
    pub nx: usize,
    pub inner: InnerOptions,
}

impl Default for GluingSettings {
    fn default() -> Self {
        Self { tube_over_eps: 12.0, h_over_eps: 0.2, nx: 8, inner: InnerOptions::default() }
    }
}

/// State shared by all solves for one manifold and `eps`: the lattice, the
/// relaxed planar lattice vortex and a cached preconditioner.
#[derive(Debug)]
pub struct GluingContext {
    pub manifold: ModelManifold,
    pub profile: Arc<VortexProfile>,
    pub grid: TubeGrid,
    pub lattice: Arc<Lattice>,
    pub correction: FiberCorrection,
    pub cutoff: (f64, f64),
    pub settings: GluingSettings,
    precond: std::sync::Mutex<Option<Arc<SlicePreconditioner>>>,
}

impl GluingContext {
    pub fn new(m: &ModelManifold, profile: Arc<VortexProfile>, settings: GluingSettings) -> Result<Self> {
        let eps = profile.epsilon;
        if settings.tube_over_eps < 12.0 {
            return Err(GlError::TubeTooNarrow { tube: settings.tube_over_eps * eps, required: 12.0 * eps });
        }
        if settings.h_over_eps > 0.25 || settings.h_over_eps <= 0.0 {
            return Err(GlError::GridTooCoarse { spacing: settings.h_over_eps * eps, limit: 0.25 * eps });
        }
        let nx = if m.dimension() == 3 { settings.nx.max(1) } else { 1 };
        let grid = TubeGrid::new(m.l0, nx, settings.tube_over_eps * eps, settings.h_over_eps * eps);
        let cutoff = (11.0 * eps, grid.half_width());
        if profile.r_max() < cutoff.0 {
            return Err(GlError::Config {
                path: "profile.rmax".into(),
                message: format!("profile radius {} below cutoff start {}", profile.r_max(), cutoff.0),
            });
        }
        // relax the planar lattice vortex on one fiber
        let plane = ModelManifold::plane();
        let pgrid = TubeGrid { nx: 1, l0: 1.0, n: grid.n, h: grid.h };
        let plat = Arc::new(Lattice::new(&plane, pgrid, eps)?);
        let papx = plain_apx(&plane, &profile, &NormalField::zero(1, 1.0), pgrid, cutoff)?;
        let pprob = Arc::new(GluingProblem::new(plat.clone(), &profile, papx, None)?);
        let sol = inner_solve(pprob, &settings.inner, None, None)?;
        let data = (0..pgrid.len())
            .map(|k| [sol.z[k * NC + 1], sol.z[k * NC + 2], sol.z[k * NC + 3], sol.z[k * NC + 4]])
            .collect();
        let correction = FiberCorrection { n: grid.n, h: grid.h, data };
        let lattice = Arc::new(Lattice::new(m, grid, eps)?);
        Ok(Self {
            manifold: *m,
            profile,
            grid,
            lattice,
            correction,
            cutoff,
            settings,
            precond: std::sync::Mutex::new(None),
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.profile.epsilon
    }

    /// The continuum ansatz for `v`.
    pub fn approximate(&self, v: &NormalField) -> Result<ApproximateSolution> {
        plain_apx(&self.manifold, &self.profile, v, self.grid, self.cutoff)
    }

    pub fn problem(&self, v: &NormalField) -> Result<Arc<GluingProblem>> {
        let apx = self.approximate(v)?;
        Ok(Arc::new(GluingProblem::new(self.lattice.clone(), &self.profile, apx, Some(&self.correction))?))
    }

    /// Projected solve for `v`, reusing the cached preconditioner.
    pub fn inner(&self, v: &NormalField, warm: Option<&[f64]>) -> Result<CorrectedSolution> {
        let prob = self.problem(v)?;
        let cached = self.precond.lock().unwrap().clone();
        let sol = inner_solve(prob, &self.settings.inner, warm, cached)?;
        let mut guard = self.precond.lock().unwrap();
        if guard.is_none() {
            *guard = Some(sol.preconditioner.clone());
        }
        Ok(sol)
    }

    /// `Pi` of the augmented residual of the corrected pair for `v`.
    pub fn balancing_map(&self, v: &NormalField) -> Result<NormalField> {
        Ok(self.inner(v, None)?.balancing)
    }

    /// Finds `v` with vanishing balancing map.
    pub fn outer_solve(&self, tol: f64, max_iter: usize) -> Result<OuterResult> {
        let m = &self.manifold;
        let nx = self.grid.nx;
        let l0 = self.grid.l0;
        let eps = self.epsilon();
        jacobi_operator(m, nx).map_err(|e| match e {
            GlError::Degenerate { sigma } => GlError::DegenerateJacobi { sigma },
            other => other,
        })?;
        // c(v) is close to (Delta + |h|^2 + R) v; seed Broyden with it
        let mut bmat: DMatrix<f64> = assemble_jacobi(m, nx).matrix;
        let mut v = NormalField::zero(nx, l0);
        let mut sol = self.inner(&v, None)?;
        let mut c = field_to_coeffs(&sol.balancing);
        let norm = |c: &[f64]| c.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let mut trace = vec![norm(&c)];
        let mut iterations = 0;
        while norm(&c) > tol {
            if iterations >= max_iter || !norm(&c).is_finite() || norm(&c) > 1e3 * trace[0].max(1e-300) {
                return Err(GlError::OuterDiverged { trace });
            }
            iterations += 1;
            let step = bmat.clone().lu().solve(&DVector::from_column_slice(&c)).ok_or_else(|| GlError::OuterDiverged { trace: trace.clone() })?;
            let mut dv: Vec<f64> = step.iter().map(|s| -s).collect();
            let cur = field_to_coeffs(&v);
            let mut cand = coeffs_to_field(&cur.iter().zip(&dv).map(|(a, b)| a + b).collect::<Vec<_>>(), l0);
            let mut shrink = 0;
            while cand.c2_gamma_norm(0.5) > 0.9 * eps && shrink < 30 {
                dv.iter_mut().for_each(|d| *d *= 0.5);
                cand = coeffs_to_field(&cur.iter().zip(&dv).map(|(a, b)| a + b).collect::<Vec<_>>(), l0);
                shrink += 1;
            }
            let warm: Vec<f64> = {
                let next = self.problem(&cand)?;
                sol.x.iter().zip(&next.x0).map(|(a, b)| a - b).collect()
            };
            let nsol = self.inner(&cand, Some(&warm))?;
            let nc = field_to_coeffs(&nsol.balancing);
            let dc = DVector::from_iterator(c.len(), nc.iter().zip(&c).map(|(a, b)| a - b));
            let dvv = DVector::from_column_slice(&dv);
            let upd = (&dc - &bmat * &dvv) * dvv.transpose() / dvv.dot(&dvv);
            bmat += upd;
            v = cand;
            c = nc;
            sol = nsol;
            trace.push(norm(&c));
        }
        Ok(OuterResult { v, solution: sol, trace, iterations })
    }
}

fn plain_apx(m: &ModelManifold, profile: &VortexProfile, v: &NormalField, grid: TubeGrid, cutoff: (f64, f64)) -> Result<ApproximateSolution> {
    crate::ansatz::build_approximate_solution(m, profile, v, grid, Some(cutoff))
}

/// Result of the balancing iteration.
#[derive(Debug, Clone)]
pub struct OuterResult {
    pub v: NormalField,
    pub solution: CorrectedSolution,
    /// `sup |B(v)|` per outer iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// Energy density diagnostics of a lattice configuration.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    pub epsilon: f64,
    /// Per slice, integrated against the fiber measure `dy`.
    pub fiber_energy: Vec<f64>,
    pub fiber_energy_over_2pi: Vec<f64>,
    /// Per slice, the radius `|y|` containing 90% of the fiber energy.
    pub half_width: Vec<f64>,
    pub total_energy: f64,
    pub pairings: Vec<Pairing>,
}

impl EnergyReport {
    pub fn max_half_width(&self) -> f64 {
        self.half_width.iter().fold(0.0, |a: f64, b| a.max(*b))
    }

    pub fn max_fiber_deviation(&self) -> f64 {
        self.fiber_energy_over_2pi.iter().fold(0.0, |a: f64, b| a.max((b - 1.0).abs()))
    }
}

/// `int e_eps chi` against `2 pi int_S chi`.
#[derive(Debug, Clone, Serialize)]
pub struct Pairing {
    pub name: String,
    pub integral: f64,
    pub reference: f64,
}

/// A test function on the tube.
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    pub f: Arc<dyn Fn(f64, [f64; 2]) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunction").field("name", &self.name).finish()
    }
}

impl TestFunction {
    pub fn new(name: &str, f: impl Fn(f64, [f64; 2]) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), f: Arc::new(f) }
    }

    /// Constant, `cos x` and a bump in `y`.
    pub fn builtin() -> Vec<Self> {
        vec![
            Self::new("constant", |_, _| 1.0),
            Self::new("cos_x", |x, _| x.cos()),
            Self::new("bump_y", |x, y| (-(y[0] - 0.3).powi(2) - y[1] * y[1]).exp() * (1.0 + 0.5 * x.sin())),
        ]
    }
}

/// Energy per fiber, concentration half-width and test-function pairings.
pub fn energy_concentration(lat: &Lattice, x: &[f64], tests: &[TestFunction]) -> EnergyReport {
    let g = lat.grid;
    let elems = lat.element_energies(x);
    let mut per_slice: Vec<Vec<(f64, f64)>> = vec![Vec::new(); g.nx];
    let mut total = 0.0;
    for (s, p, e, meas) in &elems {
        per_slice[*s].push((p[1].hypot(p[2]), e / meas));
        total += e;
    }
    let fiber_energy: Vec<f64> = per_slice.iter().map(|v| v.iter().map(|q| q.1).sum()).collect();
    let half_width = per_slice
        .iter_mut()
        .map(|v| {
            v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let tot: f64 = v.iter().map(|q| q.1).sum();
            let mut acc = 0.0;
            let mut prev = (0.0, 0.0);
            for (r, e) in v.iter() {
                if acc + e >= 0.9 * tot {
                    let t = if *e > 0.0 { (0.9 * tot - acc) / e } else { 1.0 };
                    return prev.0 + t * (r - prev.0);
                }
                acc += e;
                prev = (*r, acc);
            }
            v.last().map(|q| q.0).unwrap_or(0.0)
        })
        .collect();
    let two_pi = 2.0 * std::f64::consts::PI;
    let pairings = tests
        .iter()
        .map(|t| {
            let integral: f64 = elems.iter().map(|(_, p, e, _)| e * (t.f)(p[0], [p[1], p[2]])).sum();
            let reference = if lat.three_d {
                let m = 2048;
                let dx = g.l0 / m as f64;
                two_pi * (0..m).map(|i| (t.f)(i as f64 * dx, [0.0, 0.0])).sum::<f64>() * dx
            } else {
                two_pi * (t.f)(0.0, [0.0, 0.0])
            };
            Pairing { name: t.name.clone(), integral, reference }
        })
        .collect();
    EnergyReport {
        epsilon: lat.epsilon,
        fiber_energy_over_2pi: fiber_energy.iter().map(|e| e / two_pi).collect(),
        fiber_energy,
        half_width,
        total_energy: total,
        pairings,
    }
}

/// Largest distance from `S` of the zero set of `phi`, over the slices.
pub fn zero_set_distance(cs: &CorrectedSolution) -> f64 {
    let c = crate::ansatz::vortex_centers(&cs.problem.lattice.grid, &cs.phi());
    c.iter().map(|p| p[0].hypot(p[1])).fold(0.0, f64::max)
}

/// Near-`S` slice solves blended with a far-field screened Laplacian.
pub struct PartitionPreconditioner {
    pub delta: f64,
    slices: Arc<SlicePreconditioner>,
    near: Vec<f64>,
    near_support: Vec<f64>,
    far: Vec<f64>,
    far_support: Vec<f64>,
    far_solver: crate::linop::DirichletPoisson,
    n: usize,
    sd: usize,
    nx: usize,
    shift: f64,
    weight: Vec<f64>,
    free: Vec<bool>,
}

impl std::fmt::Debug for PartitionPreconditioner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PartitionPreconditioner").field("delta", &self.delta).field("slices", &self.nx).finish()
    }
}

impl PartitionPreconditioner {
    /// `S z = eta_near P_near (zeta_near z) + eta_far P_far (zeta_far z)`.
    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let nd = self.nx * self.sd;
        let mut near_in = vec![0.0; nd + 2 * self.nx];
        for d in 0..nd {
            near_in[d] = r[d] * self.near[d / NC];
        }
        let near_out = self.slices.apply(&near_in);
        let mut out = vec![0.0; nd];
        for d in 0..nd {
            out[d] = near_out[d] * self.near_support[d / NC];
        }
        let n = self.n;
        let m = n - 2;
        let f = n * n;
        for s in 0..self.nx {
            for c in 0..NC {
                let mut data = vec![0.0; m * m];
                for i in 1..n - 1 {
                    for j in 1..n - 1 {
                        let k = s * f + i * n + j;
                        let d = k * NC + c;
                        if self.free[d] {
                            data[(i - 1) * m + (j - 1)] = r[d] * self.far[k] / self.weight[d];
                        }
                    }
                }
                // both blocks are close to -Delta + 1/eps^2 away from the core
                self.far_solver.solve(&mut data, self.shift);
                for i in 1..n - 1 {
                    for j in 1..n - 1 {
                        let k = s * f + i * n + j;
                        let d = k * NC + c;
                        if self.free[d] {
                            out[d] += data[(i - 1) * m + (j - 1)] * self.far_support[k];
                        }
                    }
                }
            }
        }
        out
    }
}

/// Builds the partition preconditioner of patch radius `delta` for the
/// linearization at the ansatz of `problem`.
pub fn build_partition_preconditioner(problem: &GluingProblem, delta: f64) -> Result<(PartitionPreconditioner, Csr)> {
    let lat = &problem.lattice;
    let eps = lat.epsilon;
    let tube = lat.grid.half_width();
    if delta < 2.0 * eps || delta > tube / 4.0 {
        return Err(GlError::PatchTooSmall { delta, min: 2.0 * eps, max: tube / 4.0 });
    }
    let u = vec![0.0; lat.grid.len()];
    let jac = lat.assemble_jacobian(&problem.x0, &problem.x0, &u);
    let slices = Arc::new(SlicePreconditioner::build(&jac, &problem.projector, lat, default_shift(eps))?);
    let g = lat.grid;
    let radius = |k: usize| {
        let (_, y) = g.point(k);
        y[0].hypot(y[1])
    };
    let near: Vec<f64> = (0..g.len()).map(|k| 1.0 - quintic_step(radius(k), delta, 2.0 * delta).0).collect();
    let near_support: Vec<f64> = (0..g.len()).map(|k| 1.0 - quintic_step(radius(k), 2.0 * delta, 3.0 * delta).0).collect();
    let far: Vec<f64> = near.iter().map(|v| 1.0 - v).collect();
    let far_support: Vec<f64> = (0..g.len()).map(|k| quintic_step(radius(k), 0.0, delta).0).collect();
    let l2 = crate::linop::Grid2d::new(g.half_width(), g.h);
    let far_solver = crate::linop::DirichletPoisson::new(&l2);
    let pre = PartitionPreconditioner {
        delta,
        slices,
        near,
        near_support,
        far,
        far_support,
        far_solver,
        n: g.n,
        sd: lat.slice_dofs(),
        nx: g.nx,
        shift: 1.0 / (eps * eps),
        weight: lat.weight.clone(),
        free: lat.free.clone(),
    };
    Ok((pre, jac))
}

/// Measured contraction `max ||(I - J S) r|| / ||r||` over random pairs
/// orthogonal to the obstruction space, in the `W` norm.
pub fn measure_contraction(problem: &GluingProblem, pre: &PartitionPreconditioner, jac: &Csr, samples: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let lat = &problem.lattice;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = lat.dim();
    let wnorm = |v: &[f64]| (0..n).filter(|d| lat.free[*d]).map(|d| v[d] * v[d] / lat.weight[d]).sum::<f64>().sqrt();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let raw: Vec<f64> = (0..n).map(|d| if lat.free[d] { rng.gen_range(-1.0..1.0) } else { 0.0 }).collect();
        let (perp, _) = problem.projector.project(&raw, problem.apx.v.l0);
        // residuals are W-scaled: r = W (I - P) raw
        let r: Vec<f64> = (0..n).map(|d| if lat.free[d] { perp[d] * lat.weight[d] } else { 0.0 }).collect();
        let s = pre.apply(&r);
        let mut js = vec![0.0; n];
        jac.apply(&s, &mut js);
        let diff: Vec<f64> = (0..n).map(|d| if lat.free[d] { r[d] - js[d] } else { 0.0 }).collect();
        // discard the component along W E, which S does not invert
        let dn = problem.unweight(&diff);
        let (dperp, _) = problem.projector.project(&dn, problem.apx.v.l0);
        let dw: Vec<f64> = (0..n).map(|d| dperp[d] * lat.weight[d]).collect();
        worst = worst.max(wnorm(&dw) / wnorm(&r));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Compares assembled derivatives (repeated unknowns summed) with differences.
    fn fd_check(e: &Elem, x: &[f64]) {
        let n = x.len();
        let len = e_len(e);
        let assembled = |x: &[f64]| {
            let l = e.eval(x, true);
            let mut g = vec![0.0; n];
            let mut hs = vec![vec![0.0; n]; n];
            for a in 0..len {
                g[e.dofs[a]] += l.g[a];
                for b in 0..len {
                    hs[e.dofs[a]][e.dofs[b]] += l.hs[a][b];
                }
            }
            (g, hs)
        };
        let (g, hs) = assembled(x);
        let step = 1e-6;
        for a in 0..n {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[a] += step;
            xm[a] -= step;
            let gd = (e.eval(&xp, false).val - e.eval(&xm, false).val) / (2.0 * step);
            assert!((gd - g[a]).abs() < 1e-6 * (1.0 + gd.abs()), "grad {a}: {gd} vs {}", g[a]);
            let (gp, _) = assembled(&xp);
            let (gm, _) = assembled(&xm);
            for b in 0..n {
                let hd = (gp[b] - gm[b]) / (2.0 * step);
                assert!((hd - hs[b][a]).abs() < 1e-5 * (1.0 + hd.abs()), "hess {b},{a}: {hd} vs {}", hs[b][a]);
            }
        }
    }

    #[test]
    fn element_derivatives_match_differences() {
        let x = [0.3, -0.7, 0.4, 0.9, -0.2, 0.5, 0.1];
        fd_check(&Elem { owner: 0, kind: Kind::Link(1), dofs: [0, 1, 2, 3, 4], sgn: [0.0; 4], c: 1.3, h: 0.7, measure: 1.0 }, &x);
        fd_check(&Elem { owner: 0, kind: Kind::Link(0), dofs: [5, 1, 2, 1, 2], sgn: [0.0; 4], c: 0.8, h: 1.1, measure: 1.0 }, &x);
        fd_check(&Elem { owner: 0, kind: Kind::Plaq(1, 2), dofs: [0, 5, 6, 3, 0], sgn: [0.5, 0.4, -0.5, -0.4], c: 2.0, h: 0.0, measure: 1.0 }, &x);
        fd_check(&Elem { owner: 0, kind: Kind::Pot, dofs: [1, 2, 0, 0, 0], sgn: [0.0; 4], c: 0.9, h: 0.0, measure: 1.0 }, &x);
    }

    #[test]
    fn gmres_solves_small_nonsymmetric_system() {
        let n = 30;
        let a = |v: &[f64]| -> Vec<f64> {
            (0..n).map(|i| 3.0 * v[i] + if i > 0 { -v[i - 1] } else { 0.0 } + if i + 1 < n { 0.5 * v[i + 1] } else { 0.0 }).collect()
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let (x, info) = gmres(&a, &|v| v.to_vec(), &b, 1e-12, 7, 500);
        let ax = a(&x);
        assert!(info.relative_residual < 1e-11);
        for i in 0..n {
            assert!((ax[i] - b[i]).abs() < 1e-10);
        }
    }
}
