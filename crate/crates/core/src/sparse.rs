//! Symmetric sparse matrices in compressed-row form and a direct SPD solver.

use std::fmt::Write as _;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};

use crate::error::{Error, Result};

/// Accumulates `(row, col, value)` contributions; duplicates are summed in
/// insertion order, so assembly is bit-reproducible for a fixed element order.
#[derive(Clone, Debug, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        TripletBuilder { n, entries: Vec::new() }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        TripletBuilder { n, entries: Vec::with_capacity(cap) }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        self.entries.push((i, j, v));
    }

    /// Scatters a dense local matrix; `None` dofs are skipped.
    pub fn add_local<const N: usize>(&mut self, dofs: &[Option<usize>; N], local: &[[f64; N]; N]) {
        for a in 0..N {
            let Some(i) = dofs[a] else { continue };
            for b in 0..N {
                if let Some(j) = dofs[b] {
                    self.entries.push((i, j, local[a][b]));
                }
            }
        }
    }

    pub fn build(mut self) -> SparseSymMatrix {
        self.entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in self.entries {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseSymMatrix { n: self.n, row_ptr, col_idx, values }
    }
}

/// Square sparse matrix stored with both triangles (CSR).
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSymMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymMatrix {
    pub fn from_triplets(n: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut b = TripletBuilder::with_capacity(n, entries.len());
        for &(i, j, v) in entries {
            b.add(i, j, v);
        }
        b.build()
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal_matrix(&vec![1.0; n])
    }

    pub fn diagonal_matrix(d: &[f64]) -> Self {
        let entries: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(d.len(), &entries)
    }

    pub fn from_dense(a: &[Vec<f64>]) -> Self {
        let n = a.len();
        let mut b = TripletBuilder::new(n);
        for (i, row) in a.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    b.add(i, j, v);
                }
            }
        }
        b.build()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    /// `x^T A x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.matvec(x))
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        self.iter().map(|(i, j, v)| (v - self.get(j, i)).abs()).fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self) -> bool {
        self.asymmetry() == 0.0
    }

    pub fn scaled(&self, t: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= t);
        out
    }

    /// `self + s * other`
    pub fn add_scaled(&self, other: &SparseSymMatrix, s: f64) -> Self {
        assert_eq!(self.n, other.n);
        let mut b = TripletBuilder::with_capacity(self.n, self.nnz() + other.nnz());
        for (i, j, v) in self.iter() {
            b.add(i, j, v);
        }
        for (i, j, v) in other.iter() {
            b.add(i, j, s * v);
        }
        b.build()
    }

    /// Principal submatrix on the given (ascending) index set.
    pub fn restrict(&self, keep: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut b = TripletBuilder::new(keep.len());
        for &old in keep {
            for (j, v) in self.row(old) {
                if map[j] != usize::MAX {
                    b.add(map[old], map[j], v);
                }
            }
        }
        b.build()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n]; self.n];
        for (i, j, v) in self.iter() {
            a[i][j] = v;
        }
        a
    }

    pub(crate) fn to_faer_dense(&self) -> Mat<f64> {
        let mut a = Mat::<f64>::zeros(self.n, self.n);
        for (i, j, v) in self.iter() {
            a[(i, j)] = v;
        }
        a
    }

    /// MatrixMarket coordinate format, `symmetric` storage (lower triangle).
    pub fn to_matrix_market(&self) -> String {
        let lower: Vec<_> = self.iter().filter(|&(i, j, _)| j <= i).collect();
        let mut s = String::new();
        s.push_str("%%MatrixMarket matrix coordinate real symmetric\n");
        let _ = writeln!(s, "{} {} {}", self.n, self.n, lower.len());
        for (i, j, v) in lower {
            let _ = writeln!(s, "{} {} {:.17e}", i + 1, j + 1, v);
        }
        s
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Sparse Cholesky factorization `A = L L^T` (fill-reducing ordering inside).
pub struct SpdFactor {
    llt: faer::sparse::linalg::solvers::Llt<usize, f64>,
    n: usize,
}

impl SpdFactor {
    pub fn new(a: &SparseSymMatrix) -> Result<Self> {
        let n = a.dim();
        if n == 0 {
            return Err(Error::Matrix("empty matrix".into()));
        }
        let trip: Vec<Triplet<usize, usize, f64>> =
            a.iter().filter(|&(i, j, _)| i >= j).map(|(i, j, v)| Triplet::new(i, j, v)).collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
            .map_err(|e| Error::Matrix(format!("sparse construction failed: {e:?}")))?;
        let llt = mat
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::Matrix(format!("Cholesky factorization failed (matrix not positive definite): {e}")))?;
        Ok(SpdFactor { llt, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        self.llt.solve_in_place(rhs.as_mut());
        (0..self.n).map(|i| rhs[(i, 0)]).collect()
    }

    /// Solves for several right-hand sides at once.
    pub fn solve_many(&self, cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
        if cols.is_empty() {
            return Vec::new();
        }
        let mut rhs = Mat::<f64>::from_fn(self.n, cols.len(), |i, j| cols[j][i]);
        self.llt.solve_in_place(rhs.as_mut());
        (0..cols.len()).map(|j| (0..self.n).map(|i| rhs[(i, j)]).collect()).collect()
    }
}

/// Relative residual bound enforced by [`solve_spd`].
pub const SPD_SOLVE_TOL: f64 = 1e-12;

/// Direct sparse solve of an SPD system with up to three steps of iterative
/// refinement against [`SPD_SOLVE_TOL`].
pub fn solve_spd(a: &SparseSymMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.dim() {
        return Err(Error::Argument(format!("rhs length {} != dimension {}", b.len(), a.dim())));
    }
    let f = SpdFactor::new(a)?;
    let mut x = f.solve(b);
    let bn = norm(b);
    if bn == 0.0 {
        return Ok(x);
    }
    for _ in 0..3 {
        let ax = a.matvec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        if norm(&r) <= SPD_SOLVE_TOL * bn {
            break;
        }
        let dx = f.solve(&r);
        x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
    }
    Ok(x)
}
