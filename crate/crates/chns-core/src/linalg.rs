//! Minimal sparse/dense linear algebra layer.
//!
//! Sparse matrices are stored in CSR for assembly and products; direct
//! factorizations are delegated to faer's sparse LU.

use crate::error::{ChnsError, Result};
use faer::linalg::solvers::SolveCore;
use faer::sparse::{SparseColMat, Triplet};

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl Csr {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, _, _) in triplets {
            debug_assert!(r < nrows);
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0f64; triplets.len()];
        let mut next = counts.clone();
        for &(r, c, v) in triplets {
            debug_assert!(c < ncols);
            let k = next[r];
            cols[k] = c;
            vals[k] = v;
            next[r] += 1;
        }
        // sort each row by column and merge duplicates
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut perm: Vec<usize> = Vec::new();
        for r in 0..nrows {
            let (s, e) = (counts[r], counts[r + 1]);
            perm.clear();
            perm.extend(s..e);
            perm.sort_by_key(|&k| cols[k]);
            let mut last_col = usize::MAX;
            for &k in &perm {
                if cols[k] == last_col {
                    let v = data.last_mut().unwrap();
                    *v += vals[k];
                } else {
                    indices.push(cols[k]);
                    data.push(vals[k]);
                    last_col = cols[k];
                }
            }
            indptr.push(indices.len());
        }
        Csr { nrows, ncols, indptr, indices, data }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Csr { nrows, ncols, indptr: vec![0; nrows + 1], indices: Vec::new(), data: Vec::new() }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[s..e], &self.data[s..e])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[r] = acc;
        }
        y
    }

    /// y += scale * A x
    pub fn matvec_add(&self, x: &[f64], scale: f64, y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[r] += scale * acc;
        }
    }

    /// y += scale * A^T x
    pub fn matvec_transpose_add(&self, x: &[f64], scale: f64, y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let xr = scale * x[r];
            for (c, v) in cols.iter().zip(vals) {
                y[*c] += v * xr;
            }
        }
    }

    pub fn transpose(&self) -> Csr {
        let mut trips = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                trips.push((*c, r, *v));
            }
        }
        Csr::from_triplets(self.ncols, self.nrows, &trips)
    }

    /// Quadratic form x^T A y.
    pub fn quad_form(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        let mut acc = 0.0;
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut row_acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                row_acc += v * y[*c];
            }
            acc += x[r] * row_acc;
        }
        acc
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.nrows.min(self.ncols)];
        for r in 0..d.len() {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                if *c == r {
                    d[r] = *v;
                }
            }
        }
        d
    }

    pub fn to_triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                t.push((r, *c, *v));
            }
        }
        t
    }

    /// A + scale * B, requiring equal shapes.
    pub fn add_scaled(&self, other: &Csr, scale: f64) -> Csr {
        assert_eq!(self.nrows, other.nrows);
        assert_eq!(self.ncols, other.ncols);
        let mut trips = self.to_triplets();
        for r in 0..other.nrows {
            let (cols, vals) = other.row(r);
            for (c, v) in cols.iter().zip(vals) {
                trips.push((r, *c, scale * v));
            }
        }
        Csr::from_triplets(self.nrows, self.ncols, &trips)
    }

    /// Dense copy, for small oracle computations only.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                m[(r, *c)] += v;
            }
        }
        m
    }
}

/// Sparse LU factorization (unsymmetric, fill-reducing ordering via faer).
pub struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl SparseLu {
    pub fn factor(a: &Csr) -> Result<Self> {
        assert_eq!(a.nrows, a.ncols);
        let trips: Vec<Triplet<usize, usize, f64>> = a
            .to_triplets()
            .into_iter()
            .map(|(r, c, v)| Triplet::new(r, c, v))
            .collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(a.nrows, a.ncols, &trips)
            .map_err(|e| ChnsError::LinearSolve(format!("matrix build: {e:?}")))?;
        let lu = mat
            .sp_lu()
            .map_err(|e| ChnsError::LinearSolve(format!("sparse LU: {e:?}")))?;
        Ok(SparseLu { n: a.nrows, lu })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut rhs = faer::Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        self.lu
            .solve_in_place_with_conj(faer::Conj::No, rhs.as_mut());
        (0..self.n).map(|i| rhs[(i, 0)]).collect()
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut rhs = faer::Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        self.lu
            .solve_transpose_in_place_with_conj(faer::Conj::No, rhs.as_mut());
        (0..self.n).map(|i| rhs[(i, 0)]).collect()
    }
}

/// Assembler for block-structured sparse systems with optional homogeneous
/// Dirichlet elimination (constrained rows/columns become the identity).
pub struct BlockSystem {
    pub n: usize,
    triplets: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
    constrained: Vec<bool>,
}

impl BlockSystem {
    pub fn new(n: usize) -> Self {
        BlockSystem { n, triplets: Vec::new(), rhs: vec![0.0; n], constrained: vec![false; n] }
    }

    /// Mark global dofs as homogeneous Dirichlet.
    pub fn constrain(&mut self, offset: usize, mask: &[bool]) {
        for (i, m) in mask.iter().enumerate() {
            if *m {
                self.constrained[offset + i] = true;
            }
        }
    }

    pub fn add_matrix(&mut self, row0: usize, col0: usize, a: &Csr, scale: f64) {
        if scale == 0.0 {
            return;
        }
        for r in 0..a.nrows {
            let (cols, vals) = a.row(r);
            for (c, v) in cols.iter().zip(vals) {
                if *v != 0.0 {
                    self.triplets.push((row0 + r, col0 + c, scale * v));
                }
            }
        }
    }

    pub fn add_matrix_transpose(&mut self, row0: usize, col0: usize, a: &Csr, scale: f64) {
        if scale == 0.0 {
            return;
        }
        for r in 0..a.nrows {
            let (cols, vals) = a.row(r);
            for (c, v) in cols.iter().zip(vals) {
                if *v != 0.0 {
                    self.triplets.push((row0 + c, col0 + r, scale * v));
                }
            }
        }
    }

    pub fn add_entry(&mut self, r: usize, c: usize, v: f64) {
        self.triplets.push((r, c, v));
    }

    pub fn add_rhs(&mut self, row0: usize, b: &[f64], scale: f64) {
        for (i, v) in b.iter().enumerate() {
            self.rhs[row0 + i] += scale * v;
        }
    }

    pub fn build(&self) -> Csr {
        if self.constrained.iter().any(|&c| c) {
            let mut trips: Vec<(usize, usize, f64)> = self
                .triplets
                .iter()
                .filter(|(r, c, _)| !self.constrained[*r] && !self.constrained[*c])
                .copied()
                .collect();
            for (d, c) in self.constrained.iter().enumerate() {
                if *c {
                    trips.push((d, d, 1.0));
                }
            }
            Csr::from_triplets(self.n, self.n, &trips)
        } else {
            Csr::from_triplets(self.n, self.n, &self.triplets)
        }
    }

    /// Right-hand side with constrained entries zeroed.
    pub fn rhs_constrained(&self) -> Vec<f64> {
        let mut rhs = self.rhs.clone();
        for (d, c) in self.constrained.iter().enumerate() {
            if *c {
                rhs[d] = 0.0;
            }
        }
        rhs
    }
}

/// Conjugate gradient for small dense SPD systems.
pub fn cg_dense(a: &nalgebra::DMatrix<f64>, b: &[f64], tol: f64, max_iter: usize) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    if rs.sqrt() <= tol {
        return x;
    }
    for _ in 0..max_iter {
        let ap: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| a[(i, j)] * p[j]).sum())
            .collect();
        let alpha = rs / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = dot(&r, &r);
        if rs_new.sqrt() <= tol {
            break;
        }
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
    x
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
