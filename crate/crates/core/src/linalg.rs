//! Dense linear-algebra kernels.
//!
//! [`DenseMatrix`] is a row-major `f64` matrix. The factorizations here work
//! on column-major scratch copies internally since Householder reflectors and
//! one-sided Jacobi rotations both sweep whole columns.

use std::fmt;

use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::rng::rng_from_seed;

/// Default relative rank tolerance for [`orth`].
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Relative threshold under which a triangular diagonal entry is treated as zero.
pub const TRIANGULAR_PINV_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Row-major real matrix.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            let row = self.row(i);
            let shown: Vec<String> = row.iter().take(8).map(|v| format!("{v:.4e}")).collect();
            writeln!(f, "  {}{}", shown.join(", "), if self.cols > 8 { ", ..." } else { "" })?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "data length {} does not equal {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite { row: pos / cols.max(1), col: pos % cols.max(1) });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(LinalgError::DimensionMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(height: usize, columns: &[Vec<f64>]) -> Result<Self> {
        if columns.iter().any(|c| c.len() != height) {
            return Err(LinalgError::DimensionMismatch(format!(
                "every column must have length {height}"
            )));
        }
        let cols = columns.len();
        let mut data = vec![0.0; height * cols];
        for (j, c) in columns.iter().enumerate() {
            for (i, &v) in c.iter().enumerate() {
                data[i * cols + j] = v;
            }
        }
        Self::new(height, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw buffer. Callers must keep entries finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::with_capacity(self.rows); self.cols];
        for i in 0..self.rows {
            for (j, col) in out.iter_mut().enumerate() {
                col.push(self.data[i * self.cols + j]);
            }
        }
        out
    }

    /// Columns `range` as a new matrix.
    pub fn column_range(&self, range: std::ops::Range<usize>) -> DenseMatrix {
        assert!(range.end <= self.cols);
        let w = range.len();
        let mut data = Vec::with_capacity(self.rows * w);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[range.clone()]);
        }
        DenseMatrix { rows: self.rows, cols: w, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self · other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let n = other.cols;
        let mut out = DenseMatrix::zeros(self.rows, n);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                axpy(a, other.row(k), out_row);
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(LinalgError::DimensionMismatch(format!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let n = other.cols;
        let mut out = DenseMatrix::zeros(self.cols, n);
        for k in 0..self.rows {
            let b_row = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                axpy(a, b_row, &mut out.data[i * n..(i + 1) * n]);
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "cannot multiply {}x{} by ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// `self · x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "vector of length {} against {} columns",
                x.len(),
                self.cols
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `selfᵀ · x`.
    pub fn t_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(LinalgError::DimensionMismatch(format!(
                "vector of length {} against {} rows",
                x.len(),
                self.rows
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, self.row(i), &mut out);
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> Result<DenseMatrix> {
        if self.shape() != other.shape() {
            return Err(LinalgError::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(DenseMatrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        DenseMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Horizontal concatenation `[self other]`.
    pub fn hcat(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(LinalgError::DimensionMismatch(format!(
                "hcat of {} rows with {} rows",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(DenseMatrix { rows: self.rows, cols, data })
    }

    /// Largest entry of `|selfᵀself − I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.t_matmul(self).expect("square gram");
        let mut worst: f64 = 0.0;
        for i in 0..gram.rows {
            for j in 0..gram.cols {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram.get(i, j) - target).abs());
            }
        }
        worst
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `y += alpha · x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Matrix of i.i.d. standard normal entries, filled row by row from
/// `ChaCha8Rng::seed_from_u64(seed)` through `rand_distr::StandardNormal`.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Result<DenseMatrix> {
    if rows == 0 || cols == 0 {
        return Err(LinalgError::InvalidArgument(format!(
            "gaussian matrix needs nonzero dimensions, got {rows}x{cols}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
    Ok(DenseMatrix { rows, cols, data })
}

/// Householder reflector `H = I − τ v vᵀ` with `v[0] = 1` that maps `x` onto
/// `β e₁`. Returns `(v, τ, β)`; `τ = 0` when `x` is already a multiple of `e₁`.
fn householder(x: &[f64]) -> (Vec<f64>, f64, f64) {
    let alpha = x[0];
    let tail_sq: f64 = x[1..].iter().map(|v| v * v).sum();
    let mut v = x.to_vec();
    v[0] = 1.0;
    if tail_sq == 0.0 {
        for e in v.iter_mut().skip(1) {
            *e = 0.0;
        }
        return (v, 0.0, alpha);
    }
    let norm_x = (alpha * alpha + tail_sq).sqrt();
    let beta = if alpha >= 0.0 { -norm_x } else { norm_x };
    let v0 = alpha - beta;
    for e in v.iter_mut().skip(1) {
        *e /= v0;
    }
    let tau = (beta - alpha) / beta;
    (v, tau, beta)
}

/// Applies `I − τ v vᵀ` to the tail `col[offset..]`.
#[inline]
fn apply_reflector(v: &[f64], tau: f64, col: &mut [f64], offset: usize) {
    if tau == 0.0 {
        return;
    }
    let tail = &mut col[offset..];
    let s = tau * dot(v, tail);
    axpy(-s, v, tail);
}

struct Reflectors {
    height: usize,
    items: Vec<(Vec<f64>, f64)>,
}

impl Reflectors {
    /// Accumulates `H₀ H₁ … H_{r−1}` applied to the first `width` columns of the identity.
    fn form_q(&self, width: usize) -> Vec<Vec<f64>> {
        let mut q: Vec<Vec<f64>> = (0..width)
            .map(|j| {
                let mut e = vec![0.0; self.height];
                e[j] = 1.0;
                e
            })
            .collect();
        for (offset, (v, tau)) in self.items.iter().enumerate().rev() {
            for col in q.iter_mut() {
                apply_reflector(v, *tau, col, offset);
            }
        }
        q
    }
}

fn column_major(m: &DenseMatrix) -> Vec<Vec<f64>> {
    m.columns()
}

fn from_column_major(height: usize, cols: &[Vec<f64>]) -> DenseMatrix {
    let width = cols.len();
    let mut data = vec![0.0; height * width];
    for (j, c) in cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            data[i * width + j] = v;
        }
    }
    DenseMatrix { rows: height, cols: width, data }
}

/// Thin Householder QR of a tall matrix. `r` has a nonnegative diagonal.
pub fn qr(m: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let (rows, cols) = m.shape();
    if rows < cols {
        return Err(LinalgError::InvalidArgument(format!(
            "qr needs rows >= cols, got {rows}x{cols}"
        )));
    }
    let mut a = column_major(m);
    let mut refl = Reflectors { height: rows, items: Vec::with_capacity(cols) };
    for j in 0..cols {
        let (v, tau, beta) = householder(&a[j][j..]);
        let (head, tail) = a.split_at_mut(j + 1);
        for col in tail.iter_mut() {
            apply_reflector(&v, tau, col, j);
        }
        let cj = &mut head[j];
        cj[j] = beta;
        for e in cj.iter_mut().skip(j + 1) {
            *e = 0.0;
        }
        refl.items.push((v, tau));
    }
    let mut q = refl.form_q(cols);
    let mut r = DenseMatrix::zeros(cols, cols);
    for j in 0..cols {
        for i in 0..=j {
            r.set(i, j, a[j][i]);
        }
    }
    for i in 0..cols {
        if r.get(i, i) < 0.0 {
            for j in i..cols {
                r.set(i, j, -r.get(i, j));
            }
            for e in q[i].iter_mut() {
                *e = -*e;
            }
        }
    }
    Ok((from_column_major(rows, &q), r))
}

/// Orthonormal basis for `range(m)` by column-pivoted Householder QR.
///
/// Factorization stops once the largest remaining residual column norm drops
/// below `tol` times the largest input column norm, so the output width is the
/// numerical rank. An all-zero input yields a zero-width matrix.
pub fn orth(m: &DenseMatrix, tol: f64) -> Result<DenseMatrix> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(LinalgError::InvalidArgument(format!(
            "orth needs nonzero dimensions, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if !(tol > 0.0) {
        return Err(LinalgError::InvalidArgument(format!("orth tolerance must be positive, got {tol}")));
    }
    let rows = m.rows();
    let mut a = column_major(m);
    let mut norms: Vec<f64> = a.iter().map(|c| norm(c)).collect();
    let scale = norms.iter().cloned().fold(0.0, f64::max);
    let mut refl = Reflectors { height: rows, items: Vec::new() };
    if scale == 0.0 {
        return Ok(DenseMatrix::zeros(rows, 0));
    }
    let steps = rows.min(a.len());
    for j in 0..steps {
        let (pivot, &best) = norms[j..]
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .map(|(i, v)| (i + j, v))
            .expect("nonempty");
        if best < tol * scale {
            break;
        }
        a.swap(j, pivot);
        norms.swap(j, pivot);
        let (v, tau, _) = householder(&a[j][j..]);
        let (_, tail) = a.split_at_mut(j + 1);
        for (c, col) in tail.iter_mut().enumerate() {
            apply_reflector(&v, tau, col, j);
            norms[j + 1 + c] = norm(&col[j + 1..]);
        }
        refl.items.push((v, tau));
    }
    let width = refl.items.len();
    Ok(from_column_major(rows, &refl.form_q(width)))
}

/// Full orthogonal completion: given `u` (p×r, orthonormal columns) returns
/// a p×(p−r) matrix whose columns are orthonormal and orthogonal to `u`.
pub fn orthonormal_complement(u: &DenseMatrix) -> Result<DenseMatrix> {
    let (p, r) = u.shape();
    if r > p {
        return Err(LinalgError::InvalidArgument(format!("{r} columns cannot be orthonormal in R^{p}")));
    }
    let mut a = column_major(u);
    let mut refl = Reflectors { height: p, items: Vec::with_capacity(r) };
    for j in 0..r {
        let (v, tau, _) = householder(&a[j][j..]);
        let (_, tail) = a.split_at_mut(j + 1);
        for col in tail.iter_mut() {
            apply_reflector(&v, tau, col, j);
        }
        refl.items.push((v, tau));
    }
    let full = refl.form_q(p);
    Ok(from_column_major(p, &full[r..]))
}

/// Solves `T x = b` for upper-triangular `T` under the minimum-norm convention:
/// components whose diagonal entry is below `1e−12 · max|T_jj|` are set to
/// zero and excluded from back-substitution.
pub fn triangular_pinv_apply(r: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let k = r.rows();
    if r.cols() != k {
        return Err(LinalgError::DimensionMismatch(format!("triangular factor is {}x{}", k, r.cols())));
    }
    if b.rows() != k {
        return Err(LinalgError::DimensionMismatch(format!(
            "right-hand side has {} rows, factor has {k}",
            b.rows()
        )));
    }
    let max_diag = (0..k).map(|i| r.get(i, i).abs()).fold(0.0, f64::max);
    let keep: Vec<bool> = (0..k).map(|i| max_diag > 0.0 && r.get(i, i).abs() >= TRIANGULAR_PINV_TOL * max_diag).collect();
    let n = b.cols();
    let mut x = DenseMatrix::zeros(k, n);
    for i in (0..k).rev() {
        if !keep[i] {
            continue;
        }
        let mut acc = b.row(i).to_vec();
        for j in i + 1..k {
            if keep[j] {
                let rij = r.get(i, j);
                if rij != 0.0 {
                    axpy(-rij, x.row(j), &mut acc);
                }
            }
        }
        let d = r.get(i, i);
        for (dst, v) in x.row_mut(i).iter_mut().zip(acc) {
            *dst = v / d;
        }
    }
    Ok(x)
}

/// Thin singular value decomposition `m = u · diag(sigma) · vt`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: DenseMatrix,
    pub sigma: Vec<f64>,
    pub vt: DenseMatrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (v, s) in us.row_mut(i).iter_mut().zip(&self.sigma) {
                *v *= s;
            }
        }
        us.matmul(&self.vt).expect("consistent svd shapes")
    }

    /// Number of singular values above `tol · sigma[0]`.
    pub fn rank(&self, tol: f64) -> usize {
        let top = self.sigma.first().copied().unwrap_or(0.0);
        self.sigma.iter().filter(|&&s| s > tol * top && s > 0.0).count()
    }
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// Thin SVD: Householder QR down to a square triangle, then one-sided
/// (Hestenes) Jacobi on the triangle.
pub fn svd(m: &DenseMatrix) -> Result<SvdResult> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(LinalgError::InvalidArgument(format!("svd needs nonzero dimensions, got {rows}x{cols}")));
    }
    if rows < cols {
        let t = svd(&m.transpose())?;
        return Ok(SvdResult { u: t.vt.transpose(), sigma: t.sigma, vt: t.u.transpose() });
    }
    let (q, r) = qr(m)?;
    let n = cols;
    // Work on columns of R; V accumulates the rotations.
    let mut a = column_major(&r);
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let eps = f64::EPSILON;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let alpha = dot(&a[i], &a[i]);
                let beta = dot(&a[j], &a[j]);
                let gamma = dot(&a[i], &a[j]);
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut a, i, j, c, s);
                rotate_pair(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = a.iter().map(|c| norm(c)).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]).then(x.cmp(&y)));
    let sigma_max = norms[order[0]];
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut v_sorted = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (pos, &idx) in order.iter().enumerate() {
        let s = norms[idx];
        if s > sigma_max * eps * n as f64 && s > 0.0 {
            u_cols.push(a[idx].iter().map(|x| x / s).collect());
            sigma.push(s);
        } else {
            u_cols.push(vec![0.0; n]);
            sigma.push(if s > 0.0 { s } else { 0.0 });
            deficient.push(pos);
        }
        v_sorted.push(v[idx].clone());
    }
    if !deficient.is_empty() {
        fill_orthonormal(&mut u_cols, &deficient);
    }
    let u_r = from_column_major(n, &u_cols);
    let u = q.matmul(&u_r)?;
    let vt = from_column_major(n, &v_sorted).transpose();
    Ok(SvdResult { u, sigma, vt })
}

fn rotate_pair(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(j);
    let ci = &mut lo[i];
    let cj = &mut hi[0];
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let xi = *x;
        let yj = *y;
        *x = c * xi - s * yj;
        *y = s * xi + c * yj;
    }
}

/// Replaces the listed columns with unit vectors orthogonal to every other column.
fn fill_orthonormal(cols: &mut [Vec<f64>], slots: &[usize]) {
    let n = cols[0].len();
    let mut candidate = 0;
    for &slot in slots {
        loop {
            assert!(candidate < n, "orthonormal completion exhausted");
            let mut e = vec![0.0; n];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (idx, c) in cols.iter().enumerate() {
                    if idx == slot || (slots.contains(&idx) && norm(c) == 0.0) {
                        continue;
                    }
                    let proj = dot(c, &e);
                    axpy(-proj, c, &mut e);
                }
            }
            let ne = norm(&e);
            if ne > 0.5 {
                cols[slot] = e.iter().map(|x| x / ne).collect();
                break;
            }
        }
    }
}
