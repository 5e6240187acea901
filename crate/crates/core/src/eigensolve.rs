//! Smallest eigenpairs of `K y = lambda M y` for SPD (or kernel-deflated) `K`
//! and positive semidefinite `M`.
//!
//! The sparse solver runs a restarted block Krylov iteration on the
//! shift-inverted operator `T = (K + s M)^{-1} M`, which is self-adjoint in
//! the `(K + s M)`-inner product, so a semidefinite `M` needs no special care.
//! Ritz values `mu` of `T` map back to `lambda = 1 / mu - s`; the reported
//! eigenvalues are Rayleigh quotients with the unshifted `K`.

use faer::linalg::solvers::SelfAdjointEigen;
use faer::{Mat, Par, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{dot, norm, SparseSymMatrix, SpdFactor};

/// Relative eigenvalue tolerance.
pub const EIGEN_TOL: f64 = 1e-10;
/// Cap on applications of the shift-inverted operator.
pub const MAX_APPLICATIONS: usize = 10_000;
/// Largest dimension accepted by [`dense_oracle`].
pub const DENSE_ORACLE_MAX_DIM: usize = 2000;

const MAX_BASIS: usize = 72;
const SEED: u64 = 0x5eed_e16e;

/// Galerkin eigenvalue approximations; vectors live on the retained DOFs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenApprox {
    pub lambda1h: f64,
    /// `f64::INFINITY` when the pencil has a single finite eigenvalue.
    pub lambda2h: f64,
    pub vector1: Vec<f64>,
    /// `sqrt(y^T M y)` of `vector1` after scaling.
    pub normalization: f64,
    /// `||K y - lambda M y|| / ||K y||` for `vector1`.
    pub residual: f64,
    /// All requested eigenvalues, ascending.
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub applications: usize,
}

struct Deflation {
    z: Vec<f64>,
    mz: Vec<f64>,
    zmz: f64,
}

impl Deflation {
    fn project(&self, x: &mut [f64]) {
        let c = dot(&self.mz, x) / self.zmz;
        x.iter_mut().zip(&self.z).for_each(|(xi, zi)| *xi -= c * zi);
    }
}

struct ShiftInvert<'a> {
    m: &'a SparseSymMatrix,
    ks: SparseSymMatrix,
    factor: SpdFactor,
    deflation: Option<Deflation>,
    applications: usize,
}

impl ShiftInvert<'_> {
    fn apply_many(&mut self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let rhs: Vec<Vec<f64>> = xs.iter().map(|x| self.m.matvec(x)).collect();
        let mut out = self.factor.solve_many(&rhs);
        if let Some(d) = &self.deflation {
            out.iter_mut().for_each(|y| d.project(y));
        }
        self.applications += xs.len();
        out
    }

    fn project(&self, x: &mut [f64]) {
        if let Some(d) = &self.deflation {
            d.project(x);
        }
    }
}

/// `ks`-orthonormalizes `cand` against `basis` and among itself; drops
/// vectors that collapse (invariant subspace reached).
fn orthonormalize(
    ks: &SparseSymMatrix,
    basis: &[Vec<f64>],
    kbasis: &[Vec<f64>],
    cand: Vec<Vec<f64>>,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut kout: Vec<Vec<f64>> = Vec::new();
    for mut w in cand {
        let start = dot(&w, &ks.matvec(&w)).max(0.0).sqrt();
        if start == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for (v, kv) in basis.iter().zip(kbasis).chain(out.iter().zip(&kout)) {
                let c = dot(kv, &w);
                w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= c * vi);
            }
        }
        let kw = ks.matvec(&w);
        let nrm = dot(&w, &kw).max(0.0).sqrt();
        if nrm <= 1e-10 * start {
            continue;
        }
        out.push(w.iter().map(|x| x / nrm).collect());
        kout.push(kw.iter().map(|x| x / nrm).collect());
    }
    (out, kout)
}

fn symmetric_eigen(h: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let p = h.len();
    let mat = Mat::<f64>::from_fn(p, p, |i, j| 0.5 * (h[i][j] + h[j][i]));
    let evd = SelfAdjointEigen::new(mat.as_ref(), Side::Lower)
        .map_err(|e| Error::Matrix(format!("dense eigensolver failed: {e:?}")))?;
    let s = evd.S();
    let u = evd.U();
    let vals: Vec<f64> = (0..p).map(|i| s[i]).collect();
    let vecs: Vec<Vec<f64>> = (0..p).map(|j| (0..p).map(|i| u[(i, j)]).collect()).collect();
    Ok((vals, vecs))
}

fn combine(basis: &[Vec<f64>], coeffs: &[f64]) -> Vec<f64> {
    let n = basis[0].len();
    let mut y = vec![0.0; n];
    for (v, &c) in basis.iter().zip(coeffs) {
        y.iter_mut().zip(v).for_each(|(yi, vi)| *yi += c * vi);
    }
    y
}

/// The `count` smallest eigenpairs of `K y = lambda M y`, restricted
/// M-orthogonally away from `deflation` when given (which must then span the
/// kernel of `K`).
pub fn smallest_eigenpairs(
    k: &SparseSymMatrix,
    m: &SparseSymMatrix,
    count: usize,
    deflation: Option<&[f64]>,
) -> Result<EigenApprox> {
    let n = k.dim();
    if m.dim() != n {
        return Err(Error::Argument(format!("K has dimension {n}, M has {}", m.dim())));
    }
    if n == 0 || count == 0 {
        return Err(Error::Config("empty eigenproblem".into()));
    }
    if m.iter().all(|(_, _, v)| v == 0.0) {
        return Err(Error::Config("target matrix vanishes on the retained DOFs".into()));
    }

    let shift = if deflation.is_some() { 1e-8 * k.trace() / n as f64 } else { 0.0 };
    let ks = if shift > 0.0 { k.add_scaled(m, shift) } else { k.clone() };
    let factor = SpdFactor::new(&ks).map_err(|_| Error::Matrix("energy matrix is not positive definite".into()))?;
    let deflation = match deflation {
        Some(z) => {
            if z.len() != n {
                return Err(Error::Argument("deflation vector has wrong length".into()));
            }
            let mz = m.matvec(z);
            let zmz = dot(z, &mz);
            if !(zmz > 0.0) {
                return Err(Error::Argument("deflation vector has zero M-norm".into()));
            }
            Some(Deflation { z: z.to_vec(), mz, zmz })
        }
        None => None,
    };
    let available = n - usize::from(deflation.is_some());
    if available == 0 {
        return Err(Error::Config("no unknowns left after deflation".into()));
    }
    let count = count.min(available);
    let block = available.min((count + 2).max(4));
    let max_basis = available.min(MAX_BASIS.max(2 * block));

    let mut op = ShiftInvert { m, ks, factor, deflation, applications: 0 };

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut start: Vec<Vec<f64>> = (0..block)
        .map(|_| {
            let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            op.project(&mut x);
            x
        })
        .collect();

    let mut prev: Option<Vec<f64>> = None;
    loop {
        let (mut basis, mut kbasis) = orthonormalize(&op.ks, &[], &[], std::mem::take(&mut start));
        let mut frontier = basis.clone();
        while basis.len() < max_basis && !frontier.is_empty() {
            let mut next = op.apply_many(&frontier);
            next.truncate(max_basis - basis.len());
            let (w, kw) = orthonormalize(&op.ks, &basis, &kbasis, next);
            frontier = w.clone();
            basis.extend(w);
            kbasis.extend(kw);
        }
        let exhausted = basis.len() >= available || frontier.is_empty();

        let mbasis: Vec<Vec<f64>> = basis.iter().map(|v| m.matvec(v)).collect();
        let p = basis.len();
        let mut h = vec![vec![0.0; p]; p];
        for i in 0..p {
            for j in 0..=i {
                let v = dot(&basis[i], &mbasis[j]);
                h[i][j] = v;
                h[j][i] = v;
            }
        }
        let (mu, s) = symmetric_eigen(&h)?;
        // descending mu = ascending lambda
        let order: Vec<usize> = (0..p).rev().collect();
        let mu_max = mu[order[0]];
        if !(mu_max > 0.0) {
            return Err(Error::Config("target matrix vanishes on the search space".into()));
        }
        let finite: Vec<usize> = order.iter().copied().filter(|&i| mu[i] > 1e-13 * mu_max).take(count).collect();
        let ritz: Vec<Vec<f64>> = finite.iter().map(|&i| combine(&basis, &s[i])).collect();

        let tvals = op.apply_many(&ritz);
        let mut worst: f64 = 0.0;
        for ((y, ty), &i) in ritz.iter().zip(&tvals).zip(&finite) {
            let r: Vec<f64> = ty.iter().zip(y).map(|(a, b)| a - mu[i] * b).collect();
            let rk = dot(&r, &op.ks.matvec(&r)).max(0.0).sqrt();
            worst = worst.max(rk / mu[i]);
        }
        let current: Vec<f64> = finite.iter().map(|&i| mu[i]).collect();
        let stagnated = prev.as_ref().is_some_and(|pv| {
            pv.len() == current.len() && pv.iter().zip(&current).all(|(a, b)| (a - b).abs() <= 1e-14 * b.abs())
        });

        // Ritz values are accurate to roughly the square of the residual, so a
        // stalled iteration with residual below 1e-7 is already at EIGEN_TOL.
        if worst <= EIGEN_TOL || exhausted || (stagnated && worst <= 1e-7) {
            return finish(k, m, ritz, op.applications);
        }
        if op.applications >= MAX_APPLICATIONS {
            return Err(Error::Convergence { applications: op.applications, residual: worst });
        }
        prev = Some(current);

        // thick restart from the leading Ritz vectors
        start = order.iter().take(block).map(|&i| combine(&basis, &s[i])).collect();
        start.iter_mut().for_each(|x| op.project(x));
    }
}

fn finish(k: &SparseSymMatrix, m: &SparseSymMatrix, ritz: Vec<Vec<f64>>, applications: usize) -> Result<EigenApprox> {
    let mut pairs: Vec<(f64, Vec<f64>)> = ritz
        .into_iter()
        .map(|mut y| {
            let ym = m.quad_form(&y);
            let scale = 1.0 / ym.sqrt();
            y.iter_mut().for_each(|v| *v *= scale);
            let imax = (0..y.len()).max_by(|&a, &b| y[a].abs().total_cmp(&y[b].abs())).unwrap_or(0);
            if y[imax] < 0.0 {
                y.iter_mut().for_each(|v| *v = -*v);
            }
            (k.quad_form(&y) / m.quad_form(&y), y)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pairs.is_empty() {
        return Err(Error::Config("pencil has no finite eigenvalue".into()));
    }
    if let Some(bad) = pairs.iter().find(|p| !(p.0 > 0.0)) {
        return Err(Error::Matrix(format!("nonpositive eigenvalue {}", bad.0)));
    }

    let (lambda1h, ref y) = pairs[0];
    let ky = k.matvec(y);
    let my = m.matvec(y);
    let r: Vec<f64> = ky.iter().zip(&my).map(|(a, b)| a - lambda1h * b).collect();
    let residual = norm(&r) / norm(&ky);
    let normalization = m.quad_form(y).sqrt();

    Ok(EigenApprox {
        lambda1h,
        lambda2h: pairs.get(1).map_or(f64::INFINITY, |p| p.0),
        vector1: y.clone(),
        normalization,
        residual,
        values: pairs.iter().map(|p| p.0).collect(),
        vectors: pairs.into_iter().map(|p| p.1).collect(),
        applications,
    })
}

fn cholesky_lower(a: &Mat<f64>) -> Option<Mat<f64>> {
    a.llt(Side::Lower).ok().map(|l| l.L().to_owned())
}

/// `L^{-1} A L^{-T}`
fn congruence(l: &Mat<f64>, a: &Mat<f64>) -> Mat<f64> {
    use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
    let mut x = a.clone();
    solve_lower_triangular_in_place(l.as_ref(), x.as_mut(), Par::Seq);
    let mut y = x.transpose().to_owned();
    solve_lower_triangular_in_place(l.as_ref(), y.as_mut(), Par::Seq);
    y
}

/// `H A H` with the Householder reflector `H` sending `w` to a multiple of
/// `e_1`, dropping the first row and column. Columns `2..n` of `H` span the
/// orthogonal complement of `w`.
fn deflate_dense(a: &Mat<f64>, w: &[f64]) -> Mat<f64> {
    let n = w.len();
    let wn = norm(w);
    let mut v = w.to_vec();
    v[0] += if w[0] >= 0.0 { wn } else { -wn };
    let vv = dot(&v, &v);
    let av: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[(i, j)] * v[j]).sum()).collect();
    let vav = dot(&v, &av);
    let f = 2.0 / vv;
    Mat::from_fn(n - 1, n - 1, |i, j| {
        let (i, j) = (i + 1, j + 1);
        a[(i, j)] - f * v[i] * av[j] - f * av[i] * v[j] + f * f * vav * v[i] * v[j]
    })
}

/// All finite eigenvalues of the pencil, ascending, by dense reduction.
/// With `deflation`, the pencil is first restricted to the M-orthogonal
/// complement of that vector.
pub fn dense_oracle(k: &SparseSymMatrix, m: &SparseSymMatrix, deflation: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = k.dim();
    if n > DENSE_ORACLE_MAX_DIM {
        return Err(Error::TooLarge { dim: n, max: DENSE_ORACLE_MAX_DIM });
    }
    if m.dim() != n {
        return Err(Error::Argument("dimension mismatch".into()));
    }
    let mut kd = k.to_faer_dense();
    let mut md = m.to_faer_dense();
    if let Some(z) = deflation {
        let w = m.matvec(z);
        kd = deflate_dense(&kd, &w);
        md = deflate_dense(&md, &w);
    }
    let dim = kd.nrows();
    if dim == 0 {
        return Ok(Vec::new());
    }

    let mut vals = if let Some(l) = cholesky_lower(&md) {
        let c = congruence(&l, &kd);
        c.self_adjoint_eigenvalues(Side::Lower).map_err(|e| Error::Matrix(format!("{e:?}")))?
    } else if let Some(l) = cholesky_lower(&kd) {
        let c = congruence(&l, &md);
        let mu = c.self_adjoint_eigenvalues(Side::Lower).map_err(|e| Error::Matrix(format!("{e:?}")))?;
        let mu_max = mu.iter().cloned().fold(0.0, f64::max);
        mu.into_iter().filter(|&x| x > 1e-13 * mu_max).map(|x| 1.0 / x).collect()
    } else {
        return Err(Error::Matrix("neither K nor M is positive definite".into()));
    };
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{
        assemble_energy_matrix, assemble_target_matrix, eliminate_dirichlet, Coefficients, ProblemKind,
    };
    use crate::mesh::{BoundaryLabel, Mesh, SideLabels};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn diagonal_pencil() {
        let k = SparseSymMatrix::diagonal_matrix(&[8.0, 2.0]);
        let m = SparseSymMatrix::identity(2);
        let e = smallest_eigenpairs(&k, &m, 2, None).unwrap();
        assert!(rel(e.lambda1h, 2.0) < 1e-14);
        assert!(rel(e.lambda2h, 8.0) < 1e-14);
        assert!((e.vector1[1] - 1.0).abs() < 1e-12 && e.vector1[0].abs() < 1e-12);
        assert!((e.vectors[1][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_pencil_oracle() {
        let i = SparseSymMatrix::identity(3);
        assert_eq!(dense_oracle(&i, &i, None).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn single_dof_dirichlet_laplacian() {
        let mesh = Mesh::criss_cross_square(SideLabels::all(BoundaryLabel::Dirichlet)).unwrap();
        let k = assemble_energy_matrix(&mesh, &Coefficients::checkerboard(1.0)).unwrap();
        let m = assemble_target_matrix(&mesh, ProblemKind::Friedrichs).unwrap();
        let (k, m, _) = eliminate_dirichlet(&k, &m, &mesh);
        assert_eq!(k.dim(), 1);
        // stiffness 4, mass 8 * (1/2) / 6 = 2/3
        assert!(rel(m.get(0, 0), 2.0 / 3.0) < 1e-15);
        let e = smallest_eigenpairs(&k, &m, 2, None).unwrap();
        assert!(rel(e.lambda1h, 6.0) < 1e-14);
        assert!(e.lambda2h.is_infinite());
        let oracle = dense_oracle(&k, &m, None).unwrap();
        assert!(rel(oracle[0], 6.0) < 1e-14);
        let exact = std::f64::consts::PI.powi(2) / 2.0;
        assert!(e.lambda1h >= exact);
    }

    #[test]
    fn poincare_deflation_removes_zero_mode() {
        let mesh = Mesh::criss_cross_square(SideLabels::all(BoundaryLabel::Neumann)).unwrap();
        let k = assemble_energy_matrix(&mesh, &Coefficients::checkerboard(1.0)).unwrap();
        let m = assemble_target_matrix(&mesh, ProblemKind::Poincare).unwrap();
        let ones = vec![1.0; 9];
        let oracle = dense_oracle(&k, &m, Some(&ones)).unwrap();
        assert_eq!(oracle.len(), 8);
        assert!(oracle[0] > 0.0);
        let e = smallest_eigenpairs(&k, &m, 2, Some(&ones)).unwrap();
        assert!(rel(e.lambda1h, oracle[0]) < 1e-8);
        assert!(rel(e.lambda2h, oracle[1]) < 1e-8);
        assert!(dot(&m.matvec(&ones), &e.vector1).abs() < 1e-10);
    }

    #[test]
    fn semidefinite_trace_pencil() {
        let mesh = Mesh::criss_cross_square(SideLabels::right_neumann())
            .unwrap()
            .refine_uniform()
            .unwrap()
            .refine_uniform()
            .unwrap();
        let k = assemble_energy_matrix(&mesh, &Coefficients::checkerboard(1.0)).unwrap();
        let m = assemble_target_matrix(&mesh, ProblemKind::Trace).unwrap();
        let (k, m, _) = eliminate_dirichlet(&k, &m, &mesh);
        let oracle = dense_oracle(&k, &m, None).unwrap();
        let e = smallest_eigenpairs(&k, &m, 2, None).unwrap();
        assert!(rel(e.lambda1h, oracle[0]) < 1e-8, "{} vs {}", e.lambda1h, oracle[0]);
        assert!(rel(e.lambda2h, oracle[1]) < 1e-8);
        assert!((e.normalization - 1.0).abs() < 1e-12);
    }

    #[test]
    fn indefinite_k_is_matrix_error() {
        let k = SparseSymMatrix::diagonal_matrix(&[1.0, -2.0]);
        let m = SparseSymMatrix::identity(2);
        assert!(matches!(smallest_eigenpairs(&k, &m, 2, None), Err(Error::Matrix(_))));
    }

    #[test]
    fn zero_m_is_config_error() {
        let k = SparseSymMatrix::identity(2);
        let m = SparseSymMatrix::from_triplets(2, &[]);
        assert!(matches!(smallest_eigenpairs(&k, &m, 2, None), Err(Error::Config(_))));
    }

    #[test]
    fn oracle_refuses_large() {
        let k = SparseSymMatrix::identity(2001);
        assert!(matches!(dense_oracle(&k, &k, None), Err(Error::TooLarge { .. })));
    }
}
