//! Dense/sparse kernels behind the fold-in math: truncated SVD of a sparse
//! matrix, Moore-Penrose pseudo-inverse of a tall-thin matrix, and
//! matrix-vector products.

use crate::data::InteractionMatrix;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::scalar::{axpy, dot, norm2, Scalar};

/// Gaussian oversampling columns added to the requested rank.
pub const SVD_OVERSAMPLING: usize = 8;
/// Power iterations always performed on the randomized range estimate.
pub const SVD_MIN_POWER_ITERATIONS: usize = 4;
/// Upper bound on power iterations when the captured energy converges slowly
/// (flat spectra).
pub const SVD_MAX_POWER_ITERATIONS: usize = 32;
/// Default relative cutoff below which singular values are dropped from a
/// pseudo-inverse.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows * cols");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Columns-as-vectors constructor; each inner vector is one column.
    pub fn from_columns(rows: usize, columns: &[Vec<T>]) -> Self {
        let cols = columns.len();
        let mut m = Self::zeros(rows, cols);
        for (c, col) in columns.iter().enumerate() {
            assert_eq!(col.len(), rows);
            for r in 0..rows {
                m.set(r, c, col[r]);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "matvec: {} columns vs vector of length {}",
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `y = Aᵀ x`.
    pub fn matvec_t(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "matvec_t: {} rows vs vector of length {}",
                self.rows,
                x.len()
            )));
        }
        let mut y = vec![T::zero(); self.cols];
        for r in 0..self.rows {
            axpy(x[r], self.row(r), &mut y);
        }
        Ok(y)
    }

    /// `A B`; intended for small factors, not the hot path.
    pub fn matmul(&self, other: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a != T::zero() {
                    axpy(a, other.row(k), out.row_mut(r));
                }
            }
        }
        Ok(out)
    }

    pub fn transposed(&self) -> DenseMatrix<T> {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> T {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix<T>) -> T {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }
}

/// Rank-truncated singular value decomposition `A ≈ U Σ Vᵀ`.
///
/// `left` and `right` always carry orthonormal columns; singular values are
/// descending. `rank_warning` is set when the requested rank exceeded the
/// numerical rank, in which case trailing singular values are zero within
/// tolerance and the matching columns complete the basis without contributing
/// to the reconstruction.
#[derive(Debug, Clone)]
pub struct TruncatedSvd<T> {
    pub left: DenseMatrix<T>,
    pub singular_values: Vec<T>,
    pub right: DenseMatrix<T>,
    pub rank_warning: bool,
}

impl<T: Scalar> TruncatedSvd<T> {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `‖A − U Σ Vᵀ‖_F` against a sparse reference.
    pub fn reconstruction_error(&self, matrix: &InteractionMatrix) -> T {
        let mut acc = T::zero();
        // Dense row of the reconstruction, streamed one row at a time.
        for u in 0..matrix.rows() {
            let lu = self.left.row(u);
            let support = matrix.row(u);
            let mut si = 0usize;
            for i in 0..matrix.cols() {
                let mut rec = T::zero();
                for k in 0..self.rank() {
                    rec += lu[k] * self.singular_values[k] * self.right.get(i, k);
                }
                let a = if si < support.len() && support[si] as usize == i {
                    si += 1;
                    T::one()
                } else {
                    T::zero()
                };
                let d = a - rec;
                acc += d * d;
            }
        }
        acc.sqrt()
    }
}

/// Columns made mutually orthonormal by twice-through modified Gram-Schmidt.
/// Columns that vanish are replaced by completing the basis from unit
/// vectors, so the result always has full column rank.
fn orthonormalize_columns<T: Scalar>(cols: &mut [Vec<T>]) {
    let m = if cols.is_empty() { 0 } else { cols[0].len() };
    for c in 0..cols.len() {
        for _pass in 0..2 {
            let (head, tail) = cols.split_at_mut(c);
            let col = &mut tail[0];
            for prev in head.iter() {
                let proj = dot(prev, col);
                axpy(-proj, prev, col);
            }
        }
        let n = norm2(&cols[c]);
        if n > T::epsilon().sqrt() * T::from_usize_lossy(m.max(1)) {
            let inv = T::one() / n;
            for v in cols[c].iter_mut() {
                *v *= inv;
            }
        } else {
            complete_column(cols, c, m);
        }
    }
}

/// Replace column `c` with a unit vector orthogonal to columns `0..c`.
fn complete_column<T: Scalar>(cols: &mut [Vec<T>], c: usize, m: usize) {
    for basis in 0..m {
        let mut cand = vec![T::zero(); m];
        cand[basis] = T::one();
        for _pass in 0..2 {
            for prev in cols[..c].iter() {
                let proj = dot(prev, &cand);
                axpy(-proj, prev, &mut cand);
            }
        }
        let n = norm2(&cand);
        if n > T::from_f64_lossy(0.5) {
            let inv = T::one() / n;
            for v in cand.iter_mut() {
                *v *= inv;
            }
            cols[c] = cand;
            return;
        }
    }
    panic!("cannot complete orthonormal basis: more columns than rows");
}

/// Thin SVD of a tall matrix given as columns: `X = U Σ Vᵀ`.
///
/// One-sided Jacobi: right rotations orthogonalize the columns in place, the
/// accumulated rotations form `V`, and normalized columns form `U`. Columns
/// that end up numerically zero get a completed basis direction in `U` and
/// keep their (tiny) singular value.
fn jacobi_svd_columns<T: Scalar>(mut cols: Vec<Vec<T>>) -> (Vec<Vec<T>>, Vec<T>, Vec<Vec<T>>) {
    let n = cols.len();
    let m = if n == 0 { 0 } else { cols[0].len() };
    let mut v: Vec<Vec<T>> = (0..n)
        .map(|c| {
            let mut e = vec![T::zero(); n];
            e[c] = T::one();
            e
        })
        .collect();

    let tol = T::epsilon() * T::from_f64_lossy(100.0);
    let max_sweeps = 60;
    for _sweep in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (app, aqq, apq) = {
                    let cp = &cols[p];
                    let cq = &cols[q];
                    (dot(cp, cp), dot(cq, cq), dot(cp, cq))
                };
                if apq.abs() <= tol * (app * aqq).sqrt() || apq == T::zero() {
                    continue;
                }
                rotated = true;
                // Jacobi rotation zeroing the (p, q) entry of the 2x2 Gram block.
                let two = T::from_f64_lossy(2.0);
                let zeta = (aqq - app) / (two * apq);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                rotate_pair(&mut left[p], &mut right[0], c, s);
                let (vl, vr) = v.split_at_mut(q);
                rotate_pair(&mut vl[p], &mut vr[0], c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigma: Vec<T> = cols.iter().map(|col| norm2(col)).collect();
    // Descending by magnitude, index-ascending on ties: deterministic output.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        sigma[b]
            .partial_cmp(&sigma[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut u_sorted: Vec<Vec<T>> = order
        .iter()
        .map(|&i| std::mem::take(&mut cols[i]))
        .collect();
    let v_sorted: Vec<Vec<T>> = order.iter().map(|&i| std::mem::take(&mut v[i])).collect();
    sigma = order.iter().map(|&i| sigma[i]).collect();

    let sigma_max = sigma.first().copied().unwrap_or_else(T::zero);
    let null_tol = sigma_max * T::epsilon() * T::from_f64_lossy(100.0);
    for c in 0..n {
        if sigma[c] > null_tol && sigma[c] > T::zero() {
            let inv = T::one() / sigma[c];
            for x in u_sorted[c].iter_mut() {
                *x *= inv;
            }
        } else {
            complete_column(&mut u_sorted, c, m);
        }
    }
    (u_sorted, sigma, v_sorted)
}

fn rotate_pair<T: Scalar>(a: &mut [T], b: &mut [T], c: T, s: T) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let xp = c * *x - s * *y;
        let yq = s * *x + c * *y;
        *x = xp;
        *y = yq;
    }
}

/// Best rank-`rank` factors of a sparse binary matrix via randomized subspace
/// iteration, deterministic for a given seed.
pub fn truncated_svd<T: Scalar>(
    matrix: &InteractionMatrix,
    rank: usize,
    seed: u64,
) -> Result<TruncatedSvd<T>> {
    let m = matrix.rows();
    let n = matrix.cols();
    let min_dim = m.min(n);
    if rank == 0 || rank > min_dim {
        return Err(Error::InvalidArgument(format!(
            "rank {rank} outside 1..={min_dim}"
        )));
    }
    let samples = (rank + SVD_OVERSAMPLING).min(min_dim);
    let mut rng = rng::stream(seed, Stream::SvdRange);

    // Range finder: Y = A * Omega with Gaussian Omega, orthonormalized.
    let mut q: Vec<Vec<T>> = (0..samples)
        .map(|_| {
            let omega: Vec<T> = (0..n).map(|_| rng::standard_normal(&mut rng)).collect();
            spmv(matrix, &omega)
        })
        .collect();
    orthonormalize_columns(&mut q);

    // Power iterations until the captured energy ‖AᵀQ‖_F² stabilizes. A fixed
    // floor handles the common fast-decay case; the cap bounds flat spectra.
    let energy_tol = T::epsilon() * T::from_f64_lossy(1e4);
    let mut prev_energy = T::zero();
    for iter in 0..SVD_MAX_POWER_ITERATIONS {
        let mut z: Vec<Vec<T>> = q.iter().map(|col| spmv_t(matrix, col)).collect();
        let energy: T = z.iter().map(|col| dot(col, col)).sum();
        orthonormalize_columns(&mut z);
        q = z.iter().map(|col| spmv(matrix, col)).collect();
        orthonormalize_columns(&mut q);
        if iter + 1 >= SVD_MIN_POWER_ITERATIONS
            && (energy - prev_energy).abs() <= energy_tol * energy
        {
            break;
        }
        prev_energy = energy;
    }

    // Project: columns of Bᵀ where B = Qᵀ A, built in one sparse pass.
    let mut bt: Vec<Vec<T>> = (0..samples).map(|_| vec![T::zero(); n]).collect();
    for u in 0..m {
        for &j in matrix.row(u) {
            let j = j as usize;
            for (k, btk) in bt.iter_mut().enumerate() {
                btk[j] += q[k][u];
            }
        }
    }

    // Bᵀ = P Σ Wᵀ, so A ≈ Q B = (Q W) Σ Pᵀ.
    let (p, sigma, w) = jacobi_svd_columns(bt);

    let mut left = DenseMatrix::zeros(m, rank);
    for (t, wt) in w.iter().take(rank).enumerate() {
        for u in 0..m {
            let mut acc = T::zero();
            for (k, qk) in q.iter().enumerate() {
                acc += qk[u] * wt[k];
            }
            left.set(u, t, acc);
        }
    }
    let right = DenseMatrix::from_columns(n, &p[..rank]);
    let singular_values: Vec<T> = sigma[..rank].to_vec();

    let sigma_max = singular_values[0];
    let cutoff = sigma_max * T::epsilon() * T::from_f64_lossy(100.0);
    let rank_warning = singular_values.iter().any(|&s| s <= cutoff);

    Ok(TruncatedSvd {
        left,
        singular_values,
        right,
        rank_warning,
    })
}

fn spmv<T: Scalar>(matrix: &InteractionMatrix, x: &[T]) -> Vec<T> {
    matrix.matvec(x).expect("dimension checked by caller")
}

fn spmv_t<T: Scalar>(matrix: &InteractionMatrix, x: &[T]) -> Vec<T> {
    matrix.matvec_t(x).expect("dimension checked by caller")
}

/// Moore-Penrose pseudo-inverse of a tall-thin matrix, kept both in factored
/// form `V = A diag(Σ) Bᵀ` and materialized as the dense `d x N` matrix
/// `V⁺ = B diag(1/Σ) Aᵀ`.
#[derive(Debug, Clone)]
pub struct PseudoInverse<T> {
    pub source_rows: usize,
    pub source_cols: usize,
    /// Left factor of the source (N x r), orthonormal columns.
    pub factor_a: DenseMatrix<T>,
    /// Positive spectrum kept after the rank cutoff, descending.
    pub sigma: Vec<T>,
    /// Right factor of the source (d x r), orthonormal columns.
    pub factor_b: DenseMatrix<T>,
    /// Dense `d x N` pseudo-inverse.
    pub materialized: DenseMatrix<T>,
}

impl<T: Scalar> PseudoInverse<T> {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// Rank 0 means the source was numerically zero.
    pub fn is_zero_rank(&self) -> bool {
        self.sigma.is_empty()
    }
}

/// Pseudo-inverse via one-sided Jacobi SVD of the source. Singular values at
/// or below `rank_tol * sigma_max` are dropped.
pub fn pseudo_inverse<T: Scalar>(v: &DenseMatrix<T>, rank_tol: T) -> Result<PseudoInverse<T>> {
    let n = v.rows();
    let d = v.cols();
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument(
            "pseudo-inverse of an empty matrix".into(),
        ));
    }
    let cols: Vec<Vec<T>> = (0..d).map(|c| v.column(c)).collect();
    let (a_cols, sigma_all, b_cols) = jacobi_svd_columns(cols);

    let sigma_max = sigma_all.first().copied().unwrap_or_else(T::zero);
    let cutoff = rank_tol * sigma_max;
    let r = sigma_all
        .iter()
        .take_while(|&&s| s > cutoff && s > T::zero())
        .count();

    let factor_a = DenseMatrix::from_columns(n, &a_cols[..r]);
    let factor_b = DenseMatrix::from_columns(d, &b_cols[..r]);
    let sigma: Vec<T> = sigma_all[..r].to_vec();

    // materialized[k][i] = sum_t B[k][t] / sigma[t] * A[i][t]
    let mut materialized = DenseMatrix::zeros(d, n);
    for t in 0..r {
        let inv = T::one() / sigma[t];
        for k in 0..d {
            let coef = factor_b.get(k, t) * inv;
            if coef == T::zero() {
                continue;
            }
            let row = materialized.row_mut(k);
            for i in 0..n {
                row[i] += coef * factor_a.get(i, t);
            }
        }
    }

    Ok(PseudoInverse {
        source_rows: n,
        source_cols: d,
        factor_a,
        sigma,
        factor_b,
        materialized,
    })
}
