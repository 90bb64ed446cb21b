//! Thin wrapper around the sparse LU factorization from `faer`.

use crate::error::{GlError, Result};
use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, MatMut};

/// A square sparse matrix in triplet form.
#[derive(Debug, Clone, Default)]
pub struct TripletMatrix {
    pub n: usize,
    entries: Vec<Triplet<usize, usize, f64>>,
}

impl TripletMatrix {
    pub fn new(n: usize) -> Self {
        Self { n, entries: Vec::new() }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        Self { n, entries: Vec::with_capacity(cap) }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        if val != 0.0 {
            self.entries.push(Triplet::new(row, col, val));
        }
    }

    pub fn nnz_pushed(&self) -> usize {
        self.entries.len()
    }

    pub fn to_csc(&self) -> Result<SparseColMat<usize, f64>> {
        SparseColMat::try_new_from_triplets(self.n, self.n, &self.entries)
            .map_err(|e| GlError::LinearSolver(format!("{e:?}")))
    }

    /// y = A x, summing duplicate entries.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for t in &self.entries {
            y[t.row] += t.val * x[t.col];
        }
    }
}

/// Sparse LU factors of a square matrix (partial pivoting, fill-reducing ordering).
pub struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLu").field("n", &self.n).finish()
    }
}

impl SparseLu {
    pub fn factor(m: &TripletMatrix) -> Result<Self> {
        let csc = m.to_csc()?;
        let lu = csc
            .sp_lu()
            .map_err(|e| GlError::LinearSolver(format!("sparse LU failed: {e:?}")))?;
        Ok(Self { n: m.n, lu })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves A x = b in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let mut rhs = Mat::<f64>::zeros(self.n, 1);
        for (i, v) in b.iter().enumerate() {
            rhs[(i, 0)] = *v;
        }
        let view: MatMut<'_, f64> = rhs.as_mut();
        self.lu.solve_in_place(view);
        for (i, v) in b.iter_mut().enumerate() {
            *v = rhs[(i, 0)];
        }
    }

    /// Solves for several right-hand sides stored column-wise.
    pub fn solve_many(&self, cols: &mut [Vec<f64>]) {
        if cols.is_empty() {
            return;
        }
        let k = cols.len();
        let mut rhs = Mat::<f64>::zeros(self.n, k);
        for (j, c) in cols.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                rhs[(i, j)] = *v;
            }
        }
        self.lu.solve_in_place(rhs.as_mut());
        for (j, c) in cols.iter_mut().enumerate() {
            for (i, v) in c.iter_mut().enumerate() {
                *v = rhs[(i, j)];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_tridiagonal_system() {
        let n = 50;
        let mut m = TripletMatrix::new(n);
        for i in 0..n {
            m.push(i, i, 4.0);
            if i > 0 {
                m.push(i, i - 1, -1.0);
            }
            if i + 1 < n {
                m.push(i, i + 1, -2.0);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; n];
        m.apply(&x, &mut b);
        let lu = SparseLu::factor(&m).unwrap();
        lu.solve_in_place(&mut b);
        for i in 0..n {
            assert!((b[i] - x[i]).abs() < 1e-12);
        }
    }
}
