//! Sparse matrices and the small set of dense kernels the models need.
//!
//! The reservoir matrices are sparse (connection probability around 0.01), so
//! they are stored in CSR form and applied with a hand-written kernel. Dense
//! products used during training (Gram matrices, readout application) are also
//! written as plain scalar loops with a fixed accumulation order: results are
//! then reproducible bit for bit across machines, which the regression tests
//! rely on. nalgebra is used where a real factorization is needed (Cholesky
//! for the ridge solve, a dense eigensolver as a fallback oracle).

use crate::error::{Error, Result};
use crate::rng::RngSeed;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Compressed sparse row matrix with f64 values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from (row, col, value) triplets. Duplicate coordinates are an
    /// error; explicit zeros are kept as stored entries.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter {
                name: "dimensions",
                reason: format!("matrix must be non-empty, got {rows}x{cols}"),
            });
        }
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::IndexOutOfBounds {
                    row: r,
                    col: c,
                    rows,
                    cols,
                });
            }
            entries.push((r, c, v));
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::DuplicateEntry {
                    row: w[0].0,
                    col: w[0].1,
                });
            }
        }
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for &(r, c, v) in &entries {
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::from_triplets(rows, cols, &[])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Stored value at (r, c), or 0.0 if the coordinate has no entry.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        if r >= self.rows || c >= self.cols {
            return 0.0;
        }
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        match self.col_idx[lo..hi].binary_search(&c) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    /// Iterate stored entries in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.col_idx[k], self.values[k]))
        })
    }

    /// y += A x, accumulating per row in stored (column-ascending) order.
    pub fn mul_vec_add(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for r in 0..self.rows {
            let mut acc = y[r];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
    }

    /// y = A x.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        self.mul_vec_add(x, y);
    }

    /// All stored values multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> SparseMatrix {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= factor;
        }
        out
    }

    /// Block-diagonal replication: `copies` copies of `self` along the
    /// diagonal of a square-block layout.
    pub fn block_diag(&self, copies: usize) -> Result<SparseMatrix> {
        if copies == 0 {
            return Err(Error::InvalidParameter {
                name: "copies",
                reason: "need at least one block".into(),
            });
        }
        let mut row_ptr = Vec::with_capacity(self.rows * copies + 1);
        let mut col_idx = Vec::with_capacity(self.nnz() * copies);
        let mut values = Vec::with_capacity(self.nnz() * copies);
        row_ptr.push(0);
        for blk in 0..copies {
            let coff = blk * self.cols;
            for r in 0..self.rows {
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    col_idx.push(self.col_idx[k] + coff);
                    values.push(self.values[k]);
                }
                row_ptr.push(col_idx.len());
            }
        }
        Ok(SparseMatrix {
            rows: self.rows * copies,
            cols: self.cols * copies,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.triplets() {
            d[(r, c)] = v;
        }
        d
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        let mut trips = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if m[(r, c)] != 0.0 {
                    trips.push((r, c, m[(r, c)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &trips)
    }
}

/// Uniform draw in the open interval (lo, hi). The half-open sampler can in
/// principle return lo exactly, so that boundary is rejected.
pub(crate) fn uniform_open<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    loop {
        let v = rng.random_range(lo..hi);
        if v > lo {
            return v;
        }
    }
}

/// Sparse Erdos-Renyi random matrix: each of the b*b cells independently holds
/// a uniform(-1, 1) value with probability p, otherwise zero.
///
/// Draws are made cell by cell in row-major order, two uniforms per occupied
/// cell, so the result is a pure function of (b, p, seed).
pub fn erdos_renyi(b: usize, p: f64, seed: RngSeed) -> Result<SparseMatrix> {
    if b == 0 {
        return Err(Error::InvalidParameter {
            name: "b",
            reason: "node count must be at least 1".into(),
        });
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter {
            name: "p",
            reason: format!("connection probability must lie in (0, 1), got {p}"),
        });
    }
    let mut rng = seed.rng();
    let mut trips = Vec::new();
    for r in 0..b {
        for c in 0..b {
            let u: f64 = rng.random();
            if u < p {
                trips.push((r, c, uniform_open(&mut rng, -1.0, 1.0)));
            }
        }
    }
    SparseMatrix::from_triplets(b, b, &trips)
}

/// Outcome of a spectral radius computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub radius: f64,
    pub converged: bool,
    pub iterations: usize,
}

const POWER_MAX_ITERS: usize = 10_000;
const POWER_REL_TOL: f64 = 1e-10;
const DENSE_FALLBACK_MAX_N: usize = 200;

/// Two-mode extrapolation of the dominant eigenvalue modulus.
///
/// Fits z = A w against span{w, w_prev} in least squares, giving a monic
/// quadratic x^2 - c1 x - c2 whose max-modulus root estimates the radius.
/// This also converges when the dominant eigenvalues are a complex pair or a
/// real +/- pair, where plain norm ratios oscillate forever.
fn fit_radius(prev: Option<&[f64]>, cur: &[f64], z: &[f64], z_norm: f64) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let a = dot(cur, cur);
    if a == 0.0 {
        return 0.0;
    }
    let p = match prev {
        // first step: only the norm growth ratio is available
        None => return z_norm / a.sqrt(),
        Some(p) => p,
    };
    let b = dot(cur, p);
    let c = dot(p, p);
    let r1 = dot(cur, z);
    let r2 = dot(p, z);
    let det = a * c - b * b;
    if det > 1e-12 * a * c {
        let c1 = (r1 * c - r2 * b) / det;
        let c2 = (a * r2 - b * r1) / det;
        let disc = c1 * c1 + 4.0 * c2;
        let est = if disc >= 0.0 {
            let s = disc.sqrt();
            (0.5 * (c1 + s)).abs().max((0.5 * (c1 - s)).abs())
        } else {
            // complex pair; the product of the roots is -c2 >= 0 here
            (-c2).sqrt()
        };
        if est.is_finite() {
            return est;
        }
    }
    // iterates collinear: cur is essentially an eigenvector already
    (r1 / a).abs()
}

/// Largest eigenvalue modulus of a square sparse matrix.
///
/// Power iteration from a fixed pseudo-random start vector, with the two-mode
/// fit above as the estimator and a relative tolerance of 1e-10 held for three
/// consecutive iterations. If the iteration has not settled after 10k steps
/// and the matrix is small, a dense eigensolve decides; otherwise the last
/// estimate is returned with `converged: false`.
pub fn spectral_radius(m: &SparseMatrix) -> Result<SpectralEstimate> {
    if !m.is_square() {
        return Err(Error::NonSquareMatrix {
            rows: m.rows,
            cols: m.cols,
        });
    }
    let n = m.rows;
    if m.nnz() == 0 {
        return Ok(SpectralEstimate {
            radius: 0.0,
            converged: true,
            iterations: 0,
        });
    }
    // fixed arbitrary start vector; constant seed keeps the routine pure
    let mut rng = RngSeed::new(0x5EED_CAFE_F00D_0001).rng();
    let mut cur: Vec<f64> = (0..n).map(|_| uniform_open(&mut rng, -1.0, 1.0)).collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let c0 = norm(&cur);
    cur.iter_mut().for_each(|x| *x /= c0);
    let mut prev: Option<Vec<f64>> = None;
    let mut z = vec![0.0; n];
    let mut last_est = f64::INFINITY;
    let mut stable = 0usize;
    for it in 1..=POWER_MAX_ITERS {
        m.mul_vec(&cur, &mut z);
        let zn = norm(&z);
        if !zn.is_finite() {
            return Err(Error::NonFinite {
                context: "power iteration",
            });
        }
        if zn == 0.0 {
            // reached the null space; matrix is nilpotent along this orbit
            return Ok(SpectralEstimate {
                radius: 0.0,
                converged: true,
                iterations: it,
            });
        }
        let est = fit_radius(prev.as_deref(), &cur, &z, zn);
        if (est - last_est).abs() <= POWER_REL_TOL * est.abs().max(f64::MIN_POSITIVE) {
            stable += 1;
            if stable >= 3 {
                return Ok(SpectralEstimate {
                    radius: est,
                    converged: true,
                    iterations: it,
                });
            }
        } else {
            stable = 0;
        }
        last_est = est;
        let mut next_prev = cur.clone();
        next_prev.iter_mut().for_each(|x| *x /= zn);
        for (c, zi) in cur.iter_mut().zip(&z) {
            *c = zi / zn;
        }
        prev = Some(next_prev);
    }
    if n <= DENSE_FALLBACK_MAX_N {
        let eigs = m.to_dense().complex_eigenvalues();
        let radius = eigs.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
        return Ok(SpectralEstimate {
            radius,
            converged: true,
            iterations: POWER_MAX_ITERS,
        });
    }
    Ok(SpectralEstimate {
        radius: last_est,
        converged: false,
        iterations: POWER_MAX_ITERS,
    })
}

/// Rescale a square sparse matrix so its spectral radius equals `target`.
pub fn normalize_spectral(m: &SparseMatrix, target: f64) -> Result<SparseMatrix> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "target",
            reason: format!("target spectral radius must be positive and finite, got {target}"),
        });
    }
    let est = spectral_radius(m)?;
    if est.radius == 0.0 {
        return Err(Error::ZeroSpectralRadius);
    }
    let factor = target / est.radius;
    if !factor.is_finite() {
        return Err(Error::ZeroSpectralRadius);
    }
    Ok(m.scaled(factor))
}

/// Dense Kronecker product a (x) b.
pub fn kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = (a.nrows(), a.ncols());
    let (br, bc) = (b.nrows(), b.ncols());
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Ridge (Tikhonov) solve for the readout weights.
///
/// Given targets Y (p x T) and collected states R (n x T), returns the p x n
/// matrix W = Y R^T (R R^T + beta I)^(-1), computed through a symmetric
/// factorization of the regularized Gram matrix rather than an explicit
/// inverse. Cholesky is the fast path; when beta is so small relative to the
/// Gram scale that the shifted matrix is indefinite at f64 precision (large
/// raw-unit reservoir states do this), the solve falls back to a symmetric
/// eigendecomposition with eigenvalues clamped at the roundoff floor. With
/// beta = 0 a singular system is still reported as an error.
pub fn ridge_solve(y: &DMatrix<f64>, r: &DMatrix<f64>, beta: f64) -> Result<DMatrix<f64>> {
    if y.ncols() != r.ncols() {
        return Err(Error::ShapeMismatch {
            context: "ridge_solve sample counts",
            expected: format!("{} columns", r.ncols()),
            actual: format!("{} columns", y.ncols()),
        });
    }
    if r.ncols() == 0 {
        return Err(Error::InvalidParameter {
            name: "samples",
            reason: "need at least one sample column".into(),
        });
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "beta",
            reason: format!("regularization must be finite and non-negative, got {beta}"),
        });
    }
    let n = r.nrows();
    let mut g = gram(r);
    let g_scale = (0..n).fold(0.0f64, |m, i| m.max(g[(i, i)]));
    for i in 0..n {
        g[(i, i)] += beta;
    }
    let rhs = mul_nt(r, y);
    // Cholesky needs the shift to stay above the Gram's own rounding noise;
    // below that the factorization either fails or amplifies roundoff.
    let chol_safe = beta == 0.0 || beta >= g_scale * n as f64 * f64::EPSILON;
    if chol_safe {
        if let Some(chol) = nalgebra::Cholesky::new(g.clone()) {
            // solve (R R^T + beta I) X = R Y^T, then W = X^T
            let x = chol.solve(&rhs);
            return Ok(x.transpose());
        }
        if beta == 0.0 {
            return Err(Error::SingularSystem {
                context: "regularized Gram matrix",
            });
        }
    }
    Ok(solve_sym_eigen(g, &rhs).transpose())
}

/// Solve G X = rhs for symmetric positive semidefinite G via its
/// eigendecomposition, clamping eigenvalues at the numerical floor so that
/// rounding-induced negative values cannot flip signs.
fn solve_sym_eigen(g: DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    let n = g.nrows();
    let eig = g.symmetric_eigen();
    let l_max = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    let floor = l_max * n as f64 * f64::EPSILON;
    let mut projected = eig.eigenvectors.transpose() * rhs;
    for i in 0..n {
        let l = eig.eigenvalues[i];
        let inv = if l > floor {
            1.0 / l
        } else if floor > 0.0 {
            1.0 / floor
        } else {
            0.0
        };
        for j in 0..projected.ncols() {
            projected[(i, j)] *= inv;
        }
    }
    &eig.eigenvectors * projected
}

/// A A^T with a fixed scalar accumulation order. Storage is column-major, so
/// the inner loop fills the lower triangle of one column at a time; the upper
/// triangle is mirrored afterwards.
pub fn gram(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let t = a.ncols();
    let data = a.as_slice();
    let mut g = DMatrix::zeros(n, n);
    for k in 0..t {
        let col = &data[k * n..(k + 1) * n];
        for i in 0..n {
            let aik = col[i];
            if aik == 0.0 {
                continue;
            }
            let gcol = &mut g.as_mut_slice()[i * n..(i + 1) * n];
            for j in i..n {
                gcol[j] += aik * col[j];
            }
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            g[(i, j)] = g[(j, i)];
        }
    }
    g
}

/// A B^T for dense matrices sharing their column count.
pub fn mul_nt(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let p = b.nrows();
    let t = a.ncols();
    debug_assert_eq!(t, b.ncols());
    let ad = a.as_slice();
    let bd = b.as_slice();
    let mut c = DMatrix::zeros(n, p);
    {
        let cd = c.as_mut_slice();
        for k in 0..t {
            let ca = &ad[k * n..(k + 1) * n];
            let cb = &bd[k * p..(k + 1) * p];
            for (j, &bv) in cb.iter().enumerate() {
                if bv == 0.0 {
                    continue;
                }
                let cc = &mut cd[j * n..(j + 1) * n];
                for i in 0..n {
                    cc[i] += ca[i] * bv;
                }
            }
        }
    }
    c
}

/// y = A x for a dense matrix, accumulating along columns so each output
/// element sees its terms in ascending column order.
pub fn mat_vec(a: &DMatrix<f64>, x: &[f64], y: &mut [f64]) {
    let n = a.nrows();
    let m = a.ncols();
    debug_assert_eq!(x.len(), m);
    debug_assert_eq!(y.len(), n);
    y.fill(0.0);
    mat_vec_add(a, x, y);
}

/// y += A x with the same ordering contract as [`mat_vec`].
pub fn mat_vec_add(a: &DMatrix<f64>, x: &[f64], y: &mut [f64]) {
    let n = a.nrows();
    let data = a.as_slice();
    for (j, &xj) in x.iter().enumerate() {
        let col = &data[j * n..(j + 1) * n];
        for i in 0..n {
            y[i] += col[i] * xj;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn triplets_roundtrip_and_get() {
        let m = SparseMatrix::from_triplets(3, 4, &[(0, 1, 2.0), (2, 3, -1.5), (1, 0, 0.5)]).unwrap();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(0, 1), 2.0);
        assert_eq!(m.get(1, 0), 0.5);
        assert_eq!(m.get(2, 3), -1.5);
        assert_eq!(m.get(0, 0), 0.0);
        let trips: Vec<_> = m.triplets().collect();
        assert_eq!(trips, vec![(0, 1, 2.0), (1, 0, 0.5), (2, 3, -1.5)]);
    }

    #[test]
    fn duplicate_triplet_rejected() {
        let err = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0)]).unwrap_err();
        assert!(matches!(err, Error::DuplicateEntry { row: 0, col: 0 }));
    }

    #[test]
    fn out_of_bounds_triplet_rejected() {
        let err = SparseMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfBounds { .. }));
    }

    #[test]
    fn mul_vec_matches_dense() {
        let m = SparseMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 1.0), (0, 2, 2.0), (1, 1, -1.0), (2, 0, 0.5), (2, 2, 3.0)],
        )
        .unwrap();
        let x = [1.0, 2.0, 3.0];
        let mut y = [0.0; 3];
        m.mul_vec(&x, &mut y);
        let yd = m.to_dense() * nalgebra::DVector::from_row_slice(&x);
        for i in 0..3 {
            assert_relative_eq!(y[i], yd[i], max_relative = 1e-15);
        }
    }

    #[test]
    fn block_diag_layout() {
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 2.0)]).unwrap();
        let b = m.block_diag(3).unwrap();
        assert_eq!(b.rows(), 6);
        assert_eq!(b.cols(), 6);
        assert_eq!(b.nnz(), 6);
        for blk in 0..3 {
            assert_eq!(b.get(blk * 2, blk * 2 + 1), 1.0);
            assert_eq!(b.get(blk * 2 + 1, blk * 2), 2.0);
        }
        // off-diagonal blocks are empty
        assert_eq!(b.get(0, 3), 0.0);
        assert_eq!(b.get(4, 1), 0.0);
    }

    #[test]
    fn erdos_renyi_is_deterministic_and_in_range() {
        let a = erdos_renyi(50, 0.1, RngSeed::new(9)).unwrap();
        let b = erdos_renyi(50, 0.1, RngSeed::new(9)).unwrap();
        assert_eq!(a, b);
        for (_, _, v) in a.triplets() {
            assert!(v > -1.0 && v < 1.0);
            assert!(v.is_finite());
        }
        let c = erdos_renyi(50, 0.1, RngSeed::new(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn erdos_renyi_density_close_to_p() {
        // 200x200 at p = 0.1: expect about 4000 entries, sd about 60
        let m = erdos_renyi(200, 0.1, RngSeed::new(77)).unwrap();
        let expected = 200.0 * 200.0 * 0.1;
        assert!((m.nnz() as f64 - expected).abs() < 5.0 * 60.0, "nnz = {}", m.nnz());
    }

    #[test]
    fn erdos_renyi_rejects_bad_p() {
        assert!(erdos_renyi(5, 0.0, RngSeed::new(0)).is_err());
        assert!(erdos_renyi(5, 1.0, RngSeed::new(0)).is_err());
        assert!(erdos_renyi(5, -0.2, RngSeed::new(0)).is_err());
        assert!(erdos_renyi(0, 0.5, RngSeed::new(0)).is_err());
    }

    #[test]
    fn spectral_radius_diagonal() {
        let m = SparseMatrix::from_triplets(3, 3, &[(0, 0, 0.5), (1, 1, -2.0), (2, 2, 1.0)]).unwrap();
        let est = spectral_radius(&m).unwrap();
        assert!(est.converged);
        assert_relative_eq!(est.radius, 2.0, max_relative = 1e-9);
    }

    #[test]
    fn spectral_radius_rotation_complex_pair() {
        // eigenvalues are +/- i * s: plain power iteration never settles,
        // the two-mode fit recovers the modulus
        let s = 0.8;
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 1, s), (1, 0, -s)]).unwrap();
        let est = spectral_radius(&m).unwrap();
        assert_relative_eq!(est.radius, s, max_relative = 1e-8);
    }

    #[test]
    fn spectral_radius_nilpotent_is_zero() {
        let m = SparseMatrix::from_triplets(3, 3, &[(0, 1, 4.0), (1, 2, -3.0)]).unwrap();
        let est = spectral_radius(&m).unwrap();
        assert_eq!(est.radius, 0.0);
        assert!(est.converged);
    }

    #[test]
    fn spectral_radius_empty_matrix_is_zero() {
        let m = SparseMatrix::zeros(4, 4).unwrap();
        let est = spectral_radius(&m).unwrap();
        assert_eq!(est.radius, 0.0);
    }

    #[test]
    fn spectral_radius_matches_dense_eigensolver() {
        // oracle: nalgebra complex eigenvalues on random sparse matrices
        for seed in 0..10u64 {
            let m = erdos_renyi(40, 0.15, RngSeed::new(seed)).unwrap();
            let est = spectral_radius(&m).unwrap();
            let dense = m.to_dense().complex_eigenvalues();
            let oracle = dense.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
            if oracle > 1e-12 {
                assert_relative_eq!(est.radius, oracle, max_relative = 1e-7);
            } else {
                assert!(est.radius < 1e-9);
            }
        }
    }

    #[test]
    fn spectral_radius_requires_square() {
        let m = SparseMatrix::zeros(2, 3).unwrap();
        assert!(matches!(
            spectral_radius(&m),
            Err(Error::NonSquareMatrix { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn normalize_spectral_hits_target() {
        let m = erdos_renyi(60, 0.2, RngSeed::new(3)).unwrap();
        let scaled = normalize_spectral(&m, 0.9).unwrap();
        let est = spectral_radius(&scaled).unwrap();
        assert_relative_eq!(est.radius, 0.9, max_relative = 1e-8);
    }

    #[test]
    fn normalize_spectral_zero_radius_errors() {
        let m = SparseMatrix::from_triplets(3, 3, &[(0, 1, 1.0)]).unwrap();
        assert!(matches!(normalize_spectral(&m, 0.9), Err(Error::ZeroSpectralRadius)));
        let z = SparseMatrix::zeros(2, 2).unwrap();
        assert!(matches!(normalize_spectral(&z, 0.5), Err(Error::ZeroSpectralRadius)));
    }

    #[test]
    fn normalize_spectral_rejects_bad_target() {
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0)]).unwrap();
        assert!(normalize_spectral(&m, 0.0).is_err());
        assert!(normalize_spectral(&m, -1.0).is_err());
        assert!(normalize_spectral(&m, f64::INFINITY).is_err());
    }

    #[test]
    fn kronecker_small_case() {
        // [[1,2],[3,4]] (x) [[0,1],[1,0]]
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let k = kronecker(&a, &b);
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 1.0, 0.0, 2.0, //
                1.0, 0.0, 2.0, 0.0, //
                0.0, 3.0, 0.0, 4.0, //
                3.0, 0.0, 4.0, 0.0,
            ],
        );
        assert_eq!(k, expected);
    }

    #[test]
    fn kronecker_identity_block_structure() {
        let eye = DMatrix::identity(3, 3);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let k = kronecker(&eye, &b);
        assert_eq!(k.nrows(), 6);
        for i in 0..3 {
            for r in 0..2 {
                for c in 0..2 {
                    assert_eq!(k[(i * 2 + r, i * 2 + c)], b[(r, c)]);
                }
            }
        }
        assert_eq!(k[(0, 2)], 0.0);
        assert_eq!(k[(5, 0)], 0.0);
    }

    #[test]
    fn kronecker_vector_shapes() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let v = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let k = kronecker(&a, &v);
        assert_eq!(k.nrows(), 12);
        assert_eq!(k.ncols(), 2);
        assert_eq!(k[(0, 0)], 1.0);
        assert_eq!(k[(3, 0)], 4.0);
        assert_eq!(k[(0, 1)], 0.0);
        assert_eq!(k[(8, 0)], 1.0);
        assert_eq!(k[(8, 1)], 1.0);
    }

    #[test]
    fn gram_and_mul_nt_match_nalgebra() {
        let mut rng = RngSeed::new(5).rng();
        let a = DMatrix::from_fn(7, 13, |_, _| uniform_open(&mut rng, -1.0, 1.0));
        let b = DMatrix::from_fn(4, 13, |_, _| uniform_open(&mut rng, -1.0, 1.0));
        let g = gram(&a);
        let g_ref = &a * a.transpose();
        assert_relative_eq!(g, g_ref, max_relative = 1e-12);
        let c = mul_nt(&a, &b);
        let c_ref = &a * b.transpose();
        assert_relative_eq!(c, c_ref, max_relative = 1e-12);
    }

    #[test]
    fn mat_vec_matches_nalgebra() {
        let mut rng = RngSeed::new(6).rng();
        let a = DMatrix::from_fn(5, 9, |_, _| uniform_open(&mut rng, -2.0, 2.0));
        let x: Vec<f64> = (0..9).map(|_| uniform_open(&mut rng, -1.0, 1.0)).collect();
        let mut y = vec![0.0; 5];
        mat_vec(&a, &x, &mut y);
        let y_ref = &a * nalgebra::DVector::from_row_slice(&x);
        for i in 0..5 {
            assert_relative_eq!(y[i], y_ref[i], max_relative = 1e-13);
        }
    }

    #[test]
    fn ridge_solve_identity_states_recovers_targets() {
        // R = I, beta = 0: W = Y exactly
        let r = DMatrix::identity(4, 4);
        let y = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 0.0, 2.0]);
        let w = ridge_solve(&y, &r, 0.0).unwrap();
        assert_relative_eq!(w, y, max_relative = 1e-12);
    }

    #[test]
    fn ridge_solve_shrinks_with_beta() {
        let r = DMatrix::identity(3, 3);
        let y = DMatrix::from_row_slice(1, 3, &[2.0, 2.0, 2.0]);
        let w = ridge_solve(&y, &r, 1.0).unwrap();
        // (I + I)^-1 halves everything
        for j in 0..3 {
            assert_relative_eq!(w[(0, j)], 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn ridge_solve_zero_targets_zero_weights() {
        let mut rng = RngSeed::new(8).rng();
        let r = DMatrix::from_fn(6, 20, |_, _| uniform_open(&mut rng, -1.0, 1.0));
        let y = DMatrix::zeros(2, 20);
        let w = ridge_solve(&y, &r, 1e-6).unwrap();
        assert!(w.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn ridge_solve_matches_explicit_inverse_oracle() {
        // oracle: form the normal equations and invert explicitly
        for seed in 0..20u64 {
            let mut rng = RngSeed::new(seed).rng();
            let n = 5 + (seed as usize % 6);
            let t = n + 10;
            let p = 1 + (seed as usize % 3);
            let r = DMatrix::from_fn(n, t, |_, _| uniform_open(&mut rng, -1.0, 1.0));
            let y = DMatrix::from_fn(p, t, |_, _| uniform_open(&mut rng, -1.0, 1.0));
            let beta = 1e-6;
            let w = ridge_solve(&y, &r, beta).unwrap();
            let g = &r * r.transpose() + DMatrix::identity(n, n) * beta;
            let w_oracle = &y * r.transpose() * g.try_inverse().unwrap();
            let num = (&w - &w_oracle).norm();
            let den = w_oracle.norm().max(1e-300);
            assert!(num / den < 1e-8, "seed {seed}: rel err {}", num / den);
        }
    }

    #[test]
    fn ridge_solve_singular_without_regularization() {
        // rank-deficient states, beta = 0: Cholesky must fail cleanly
        let r = DMatrix::from_row_slice(3, 4, &[1.0, 2.0, 3.0, 4.0, 2.0, 4.0, 6.0, 8.0, 0.0, 0.0, 0.0, 0.0]);
        let y = DMatrix::from_row_slice(1, 4, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            ridge_solve(&y, &r, 0.0),
            Err(Error::SingularSystem { .. })
        ));
        // with regularization it goes through
        assert!(ridge_solve(&y, &r, 1e-8).is_ok());
    }

    #[test]
    fn ridge_solve_shape_and_beta_validation() {
        let r = DMatrix::zeros(2, 5);
        let y = DMatrix::zeros(1, 4);
        assert!(matches!(
            ridge_solve(&y, &r, 0.1),
            Err(Error::ShapeMismatch { .. })
        ));
        let y2 = DMatrix::zeros(1, 5);
        assert!(ridge_solve(&y2, &r, -1.0).is_err());
        assert!(ridge_solve(&y2, &r, f64::NAN).is_err());
    }
}
