//! Dense linear algebra: row-major matrices, vectors, and the handful of
//! factorizations the solvers rely on (Cholesky, LU, Householder QR,
//! one-sided Jacobi singular values).
//!
//! Every matrix in the crate is stored row-major. Products go through
//! `matrixmultiply::dgemm`, which is single-threaded and deterministic for a
//! fixed input, so results are bit-reproducible across runs.

use std::fmt;
use std::ops::{Deref, DerefMut};

use thiserror::Error;

use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix is not positive definite: pivot {pivot} has value {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("matrix is singular at pivot {pivot}")]
    Singular { pivot: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix dimensions must be at least 1x1, got {rows}x{cols}")]
    Empty { rows: usize, cols: usize },
    #[error("data length {len} does not match {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("{0}")]
    InvalidArgument(String),
}

/// Row-major dense matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DenseMatrix {}x{} ", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            f.debug_list()
                .entries((0..self.rows).map(|i| self.row(i)))
                .finish()
        } else {
            write!(f, "[..]")
        }
    }
}

impl DenseMatrix {
    /// Builds a matrix from row-major data, validating the shape and that
    /// every entry is finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::Empty { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(LinalgError::DataLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_raw(rows, cols, data)
    }

    /// Convenience constructor from nested rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self::from_raw(rows.len(), cols, data)
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    /// Matrix with i.i.d. N(0, std²) entries, filled in row-major order.
    pub fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut RngStream) -> Self {
        let mut data = vec![0.0; rows * cols];
        rng.fill_normal(&mut data, std);
        Self::from_raw(rows, cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
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

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> DenseVector {
        DenseVector::from((0..self.rows).map(|i| self.get(i, j)).collect::<Vec<_>>())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::from_raw(self.rows, self.cols, self.data.iter().map(|v| v * c).collect())
    }

    pub fn scale_in_place(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn add_diagonal(&mut self, c: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self.data[i * self.cols + i] += c;
        }
    }

    /// `self - other`, entrywise.
    pub fn sub(&self, other: &Self) -> Result<Self, LinalgError> {
        self.check_same_shape("sub", other)?;
        Ok(Self::from_raw(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<(), LinalgError> {
        self.check_same_shape("add", other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    fn check_same_shape(&self, op: &'static str, other: &Self) -> Result<(), LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `A x`. Panics if `x.len() != cols`.
    pub fn matvec(&self, x: &[f64]) -> DenseVector {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        let out = (0..self.rows)
            .map(|i| dot(self.row(i), x))
            .collect::<Vec<_>>();
        DenseVector::from(out)
    }

    /// `Aᵀ y`. Panics if `y.len() != rows`.
    pub fn t_matvec(&self, y: &[f64]) -> DenseVector {
        assert_eq!(y.len(), self.rows, "t_matvec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, yi) in y.iter().enumerate() {
            if *yi != 0.0 {
                axpy(*yi, self.row(i), &mut out);
            }
        }
        DenseVector::from(out)
    }

    /// `AᵀA` (cols × cols).
    pub fn gram(&self) -> DenseMatrix {
        let (n, d) = self.shape();
        let mut out = vec![0.0; d * d];
        // Aᵀ is A read with swapped strides.
        gemm(
            d, n, d, 1.0, &self.data, 1, d, &self.data, d, 1, &mut out, d, 1,
        );
        Self::from_raw(d, d, out)
    }

    /// Copies the listed rows, multiplying each by `scale`.
    pub fn select_rows(&self, idx: &[usize], scale: f64) -> DenseMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend(self.row(i).iter().map(|v| v * scale));
        }
        Self::from_raw(idx.len(), self.cols, data)
    }

    /// Rows `start..end` as a new matrix.
    pub fn row_block(&self, start: usize, end: usize) -> DenseMatrix {
        Self::from_raw(
            end - start,
            self.cols,
            self.data[start * self.cols..end * self.cols].to_vec(),
        )
    }

    /// Appends `v` as an extra trailing column.
    pub fn with_column(&self, v: &[f64]) -> Result<DenseMatrix, LinalgError> {
        if v.len() != self.rows {
            return Err(LinalgError::Shape {
                op: "with_column",
                left: self.shape(),
                right: (v.len(), 1),
            });
        }
        let c = self.cols + 1;
        let mut data = Vec::with_capacity(self.rows * c);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.push(v[i]);
        }
        Ok(Self::from_raw(self.rows, c, data))
    }

    /// Splits off the trailing column: `[B | v] -> (B, v)`.
    pub fn split_last_column(&self) -> (DenseMatrix, DenseVector) {
        assert!(self.cols >= 2, "need at least two columns to split");
        let c = self.cols - 1;
        let mut data = Vec::with_capacity(self.rows * c);
        let mut last = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let r = self.row(i);
            data.extend_from_slice(&r[..c]);
            last.push(r[c]);
        }
        (Self::from_raw(self.rows, c, data), DenseVector::from(last))
    }

    /// Stacks `[self; other]` vertically.
    pub fn vstack(&self, other: &Self) -> Result<DenseMatrix, LinalgError> {
        if self.cols != other.cols {
            return Err(LinalgError::Shape {
                op: "vstack",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self::from_raw(self.rows + other.rows, self.cols, data))
    }

    /// Scales row `i` by `w[i]`.
    pub fn scale_rows(&self, w: &[f64]) -> DenseMatrix {
        assert_eq!(w.len(), self.rows);
        let mut out = self.clone();
        for (i, wi) in w.iter().enumerate() {
            out.row_mut(i).iter_mut().for_each(|v| *v *= wi);
        }
        out
    }
}

/// Column vector of `f64`.
#[derive(Clone, PartialEq, Default)]
pub struct DenseVector(Vec<f64>);

impl fmt::Debug for DenseVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.len() <= 32 {
            write!(f, "DenseVector{:?}", self.0)
        } else {
            write!(f, "DenseVector(len {})", self.0.len())
        }
    }
}

impl DenseVector {
    /// Validating constructor: non-empty, all entries finite.
    pub fn new(data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.is_empty() {
            return Err(LinalgError::Empty { rows: 0, cols: 1 });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite { row: pos, col: 0 });
        }
        Ok(Self(data))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn filled(n: usize, v: f64) -> Self {
        Self(vec![v; n])
    }

    pub fn gaussian(n: usize, std: f64, rng: &mut RngStream) -> Self {
        let mut v = vec![0.0; n];
        rng.fill_normal(&mut v, std);
        Self(v)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.0, &self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self += alpha * x`.
    pub fn axpy(&mut self, alpha: f64, x: &[f64]) {
        axpy(alpha, x, &mut self.0);
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(self.0.iter().map(|v| v * c).collect())
    }

    pub fn scale_in_place(&mut self, c: f64) {
        self.0.iter_mut().for_each(|v| *v *= c);
    }

    pub fn sub(&self, other: &[f64]) -> Self {
        assert_eq!(self.len(), other.len());
        Self(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &[f64]) -> Self {
        assert_eq!(self.len(), other.len());
        Self(self.0.iter().zip(other).map(|(a, b)| a + b).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for DenseVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for DenseVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators keep the loop vectorizable while fixing the
    // summation order.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
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

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices whose extents cover every (row, col)
    // index reachable through the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// `A · B`.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    if a.cols != b.rows {
        return Err(LinalgError::Shape {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, 1.0, &a.data, k, 1, &b.data, n, 1, &mut out, n, 1);
    Ok(DenseMatrix::from_raw(m, n, out))
}

/// `Aᵀ · B`.
pub fn t_matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    if a.rows != b.rows {
        return Err(LinalgError::Shape {
            op: "t_matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (m, k, n) = (a.cols, a.rows, b.cols);
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, 1.0, &a.data, 1, a.cols, &b.data, n, 1, &mut out, n, 1);
    Ok(DenseMatrix::from_raw(m, n, out))
}

/// Lower-triangular Cholesky factor `M = L Lᵀ`, without pivoting.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(m: &DenseMatrix) -> Result<Self, LinalgError> {
        let n = m.rows;
        if m.cols != n {
            return Err(LinalgError::Shape {
                op: "cholesky",
                left: m.shape(),
                right: m.shape(),
            });
        }
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let s = m.data[i * n + j] - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(LinalgError::NotPositiveDefinite { pivot: i, value: s });
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        for i in 0..n {
            let s = b[i] - dot(&self.l[i * n..i * n + i], &b[..i]);
            b[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    pub fn solve(&self, b: &[f64]) -> DenseVector {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        DenseVector::from(x)
    }
}

fn check_square_rhs(m: &DenseMatrix, g: &[f64], op: &'static str) -> Result<(), LinalgError> {
    if m.rows != m.cols || m.rows != g.len() {
        return Err(LinalgError::Shape {
            op,
            left: m.shape(),
            right: (g.len(), 1),
        });
    }
    Ok(())
}

/// Solves `M x = g` for symmetric positive definite `M` by Cholesky.
pub fn solve_spd(m: &DenseMatrix, g: &[f64]) -> Result<DenseVector, LinalgError> {
    check_square_rhs(m, g, "solve_spd")?;
    Ok(Cholesky::factor(m)?.solve(g))
}

/// Result of [`solve_symmetric`]; `indefinite` records that the Cholesky
/// attempt broke down and the pivoted LU fallback produced `x`.
#[derive(Debug, Clone)]
pub struct SymmetricSolve {
    pub x: DenseVector,
    pub indefinite: bool,
}

/// Solves a symmetric system, preferring Cholesky and falling back to LU
/// with partial pivoting when the matrix is not positive definite.
pub fn solve_symmetric(m: &DenseMatrix, g: &[f64]) -> Result<SymmetricSolve, LinalgError> {
    check_square_rhs(m, g, "solve_symmetric")?;
    match Cholesky::factor(m) {
        Ok(ch) => Ok(SymmetricSolve {
            x: ch.solve(g),
            indefinite: false,
        }),
        Err(LinalgError::NotPositiveDefinite { .. }) => Ok(SymmetricSolve {
            x: solve_lu(m, g)?,
            indefinite: true,
        }),
        Err(e) => Err(e),
    }
}

/// Gaussian elimination with partial pivoting.
pub fn solve_lu(m: &DenseMatrix, g: &[f64]) -> Result<DenseVector, LinalgError> {
    check_square_rhs(m, g, "solve_lu")?;
    let n = m.rows;
    let mut a = m.data.clone();
    let mut b = g.to_vec();
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for k in 0..n {
        let (p, pv) = (k..n)
            .map(|i| (i, a[i * n + k].abs()))
            .fold((k, -1.0), |best, c| if c.1 > best.1 { c } else { best });
        if pv <= scale * 1e-14 * n as f64 {
            return Err(LinalgError::Singular { pivot: k });
        }
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            b.swap(k, p);
        }
        let piv = a[k * n + k];
        for i in k + 1..n {
            let f = a[i * n + k] / piv;
            if f != 0.0 {
                for j in k..n {
                    a[i * n + j] -= f * a[k * n + j];
                }
                b[i] -= f * b[k];
            }
        }
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= a[i * n + j] * b[j];
        }
        b[i] = s / a[i * n + i];
    }
    Ok(DenseVector::from(b))
}

/// Householder QR of a tall matrix (`rows >= cols`). Returns the thin `Q`
/// (rows × cols, orthonormal columns) and upper-triangular `R` (cols × cols).
pub fn qr_thin(a: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix), LinalgError> {
    let (n, d) = a.shape();
    if n < d {
        return Err(LinalgError::InvalidArgument(format!(
            "qr_thin needs rows >= cols, got {n}x{d}"
        )));
    }
    let (cols, reflectors) = householder(a);
    let mut r = DenseMatrix::zeros(d, d);
    for j in 0..d {
        for i in 0..=j {
            r.data[i * d + j] = cols[j * n + i];
        }
    }
    // Q = H_0 H_1 ... H_{d-1} applied to the first d columns of I.
    let mut q_cols = vec![0.0; d * n];
    for j in 0..d {
        q_cols[j * n + j] = 1.0;
    }
    for (k, v) in reflectors.iter().enumerate().rev() {
        for j in 0..d {
            let col = &mut q_cols[j * n + k..(j + 1) * n];
            let s = 2.0 * dot(v, col);
            if s != 0.0 {
                axpy(-s, v, col);
            }
        }
    }
    let q = DenseMatrix::from_fn(n, d, |i, j| q_cols[j * n + i]);
    Ok((q, r))
}

/// In-place Householder triangularization working on column-major storage.
/// Returns the reduced columns and the unit reflector vectors (reflector `k`
/// acts on rows `k..n`).
fn householder(a: &DenseMatrix) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (n, d) = a.shape();
    let mut cols = vec![0.0; d * n];
    for i in 0..n {
        for j in 0..d {
            cols[j * n + i] = a.data[i * d + j];
        }
    }
    let mut reflectors = Vec::with_capacity(d);
    for k in 0..d.min(n) {
        let x = &cols[k * n + k..(k + 1) * n];
        let norm = dot(x, x).sqrt();
        let mut v = x.to_vec();
        if norm == 0.0 {
            reflectors.push(vec![0.0; n - k]);
            continue;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vn = dot(&v, &v).sqrt();
        if vn == 0.0 {
            reflectors.push(vec![0.0; n - k]);
            continue;
        }
        v.iter_mut().for_each(|e| *e /= vn);
        for j in k..d {
            let col = &mut cols[j * n + k..(j + 1) * n];
            let s = 2.0 * dot(&v, col);
            axpy(-s, &v, col);
        }
        reflectors.push(v);
    }
    (cols, reflectors)
}

/// Singular values in descending order, length `min(rows, cols)`.
///
/// Tall inputs (`rows >= 2 cols`) are first reduced to their `R` factor;
/// the values then come from one-sided (Hestenes) Jacobi rotations.
pub fn singular_values(a: &DenseMatrix) -> Result<DenseVector, LinalgError> {
    if !a.is_finite() {
        let pos = a.data.iter().position(|v| !v.is_finite()).unwrap_or(0);
        return Err(LinalgError::NonFinite {
            row: pos / a.cols,
            col: pos % a.cols,
        });
    }
    let work = if a.rows >= a.cols { a.clone() } else { a.transpose() };
    let (p, d) = work.shape();
    // Column-major working copy.
    let (mut cols, rows) = if p >= 2 * d {
        let (hc, _) = householder(&work);
        let mut r = vec![0.0; d * d];
        for j in 0..d {
            for i in 0..=j {
                r[j * d + i] = hc[j * p + i];
            }
        }
        (r, d)
    } else {
        let mut c = vec![0.0; d * p];
        for i in 0..p {
            for j in 0..d {
                c[j * p + i] = work.data[i * d + j];
            }
        }
        (c, p)
    };
    jacobi_sweeps(&mut cols, rows, d);
    let mut sv: Vec<f64> = (0..d)
        .map(|j| dot(&cols[j * rows..(j + 1) * rows], &cols[j * rows..(j + 1) * rows]).sqrt())
        .collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
    Ok(DenseVector::from(sv))
}

fn jacobi_sweeps(cols: &mut [f64], rows: usize, d: usize) {
    const TOL: f64 = 1e-15;
    for _sweep in 0..60 {
        let mut rotated = false;
        for i in 0..d {
            for j in i + 1..d {
                let (lo, hi) = cols.split_at_mut(j * rows);
                let ci = &mut lo[i * rows..(i + 1) * rows];
                let cj = &mut hi[..rows];
                let alpha = dot(ci, ci);
                let beta = dot(cj, cj);
                let gamma = dot(ci, cj);
                if gamma.abs() <= TOL * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
                    let (xi, yi) = (*x, *y);
                    *x = c * xi - s * yi;
                    *y = s * xi + c * yi;
                }
            }
        }
        if !rotated {
            break;
        }
    }
}

/// `A = σ Q₁ Q₂ᵀ` with `Q₁` (n × d) and `Q₂` (d × d) orthonormal, so every
/// singular value of `A` equals `sigma`.
pub fn make_identical_singular_matrix(
    n: usize,
    d: usize,
    sigma: f64,
    rng: &mut RngStream,
) -> Result<DenseMatrix, LinalgError> {
    if d == 0 || n < d {
        return Err(LinalgError::InvalidArgument(format!(
            "identical-singular-value matrix needs n >= d >= 1, got n={n}, d={d}"
        )));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(LinalgError::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let (q1, _) = qr_thin(&DenseMatrix::gaussian(n, d, 1.0, rng))?;
    let (q2, _) = qr_thin(&DenseMatrix::gaussian(d, d, 1.0, rng))?;
    let mut out = vec![0.0; n * d];
    // Q₁ · Q₂ᵀ: Q₂ read with swapped strides.
    gemm(n, d, d, sigma, &q1.data, d, 1, &q2.data, 1, d, &mut out, d, 1);
    Ok(DenseMatrix::from_raw(n, d, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
        })
    }

    /// Cyclic Jacobi eigenvalue iteration on a symmetric matrix; independent
    /// of the one-sided SVD path.
    fn jacobi_eigenvalues(m: &DenseMatrix) -> Vec<f64> {
        let n = m.rows();
        let mut a = m.clone();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a.get(i, j).powi(2))
                .sum();
            if off < 1e-26 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a.get(p, q);
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a.get(k, p);
                        let akq = a.get(k, q);
                        a.set(k, p, c * akp - s * akq);
                        a.set(k, q, s * akp + c * akq);
                    }
                    for k in 0..n {
                        let apk = a.get(p, k);
                        let aqk = a.get(q, k);
                        a.set(p, k, c * apk - s * aqk);
                        a.set(q, k, s * apk + c * aqk);
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
        ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
        ev
    }

    fn random_spd(n: usize, rng: &mut RngStream) -> DenseMatrix {
        let b = DenseMatrix::gaussian(n, n, 1.0, rng);
        let mut m = b.gram();
        m.add_diagonal(1.0);
        m
    }

    #[test]
    fn matmul_identity_and_small_case() {
        let mut rng = RngStream::new(1, 0);
        let m = DenseMatrix::gaussian(3, 4, 1.0, &mut rng);
        assert_eq!(matmul(&DenseMatrix::identity(3), &m).unwrap(), m);

        let a = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = DenseMatrix::from_rows(&[[1.0], [1.0]]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = RngStream::new(2, 0);
        let a = DenseMatrix::gaussian(5, 4, 1.0, &mut rng);
        let b = DenseMatrix::gaussian(4, 3, 1.0, &mut rng);
        let diff = matmul(&a, &b).unwrap().sub(&naive_matmul(&a, &b)).unwrap();
        assert!(diff.max_abs() < 1e-12);

        let at_b = t_matmul(&a.transpose(), &b).unwrap();
        assert!(at_b.sub(&naive_matmul(&a, &b)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let a = DenseMatrix::zeros(2, 3);
        let err = matmul(&a, &a).unwrap_err();
        assert!(matches!(err, LinalgError::Shape { op: "matmul", .. }));
    }

    #[test]
    fn gram_matches_naive() {
        let mut rng = RngStream::new(3, 0);
        let a = DenseMatrix::gaussian(7, 3, 1.0, &mut rng);
        let g = a.gram();
        let naive = naive_matmul(&a.transpose(), &a);
        assert!(g.sub(&naive).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn constructor_validation() {
        assert!(matches!(
            DenseMatrix::new(0, 2, vec![]),
            Err(LinalgError::Empty { .. })
        ));
        assert!(matches!(
            DenseMatrix::new(2, 2, vec![1.0; 3]),
            Err(LinalgError::DataLength { .. })
        ));
        assert_eq!(
            DenseMatrix::new(2, 2, vec![1.0, 2.0, f64::NAN, 0.0]).unwrap_err(),
            LinalgError::NonFinite { row: 1, col: 0 }
        );
        assert!(DenseVector::new(vec![]).is_err());
        assert!(DenseVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn solve_spd_small_cases() {
        let g = [0.3, -1.2, 4.0];
        let x = solve_spd(&DenseMatrix::identity(3), &g).unwrap();
        assert_eq!(&x[..], &g);

        let m = DenseMatrix::diagonal(&[2.0, 4.0]);
        let x = solve_spd(&m, &[2.0, 4.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn solve_spd_random_residual() {
        let mut rng = RngStream::new(4, 0);
        let m = random_spd(10, &mut rng);
        let g = DenseVector::gaussian(10, 1.0, &mut rng);
        let x = solve_spd(&m, &g).unwrap();
        let r = m.matvec(&x).sub(&g);
        assert!(r.norm() < 1e-10 * g.norm());
    }

    #[test]
    fn solve_spd_reports_failing_pivot() {
        let m = DenseMatrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 2.0], [0.0, 2.0, 1.0]]);
        match solve_spd(&m, &[1.0, 1.0, 1.0]) {
            Err(LinalgError::NotPositiveDefinite { pivot, value }) => {
                assert_eq!(pivot, 2);
                assert!(value < 0.0);
            }
            other => panic!("expected pivot failure, got {other:?}"),
        }
    }

    #[test]
    fn solve_symmetric_falls_back_on_indefinite() {
        let m = DenseMatrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]);
        let g = [3.0, 3.0];
        let out = solve_symmetric(&m, &g).unwrap();
        assert!(out.indefinite);
        assert!((out.x[0] - 1.0).abs() < 1e-12 && (out.x[1] - 1.0).abs() < 1e-12);

        let out = solve_symmetric(&DenseMatrix::identity(2), &g).unwrap();
        assert!(!out.indefinite);
    }

    #[test]
    fn lu_detects_singular() {
        let m = DenseMatrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]);
        assert!(matches!(solve_lu(&m, &[1.0, 1.0]), Err(LinalgError::Singular { .. })));
    }

    #[test]
    fn qr_reconstructs() {
        let mut rng = RngStream::new(5, 0);
        let a = DenseMatrix::gaussian(12, 5, 1.0, &mut rng);
        let (q, r) = qr_thin(&a).unwrap();
        let qtq = q.gram();
        assert!(qtq.sub(&DenseMatrix::identity(5)).unwrap().max_abs() < 1e-12);
        assert!(matmul(&q, &r).unwrap().sub(&a).unwrap().max_abs() < 1e-12);
        for i in 0..5 {
            for j in 0..i {
                assert_eq!(r.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn singular_values_simple_cases() {
        let sv = singular_values(&DenseMatrix::diagonal(&[1.0, 3.0])).unwrap();
        assert!((sv[0] - 3.0).abs() < 1e-14 && (sv[1] - 1.0).abs() < 1e-14);

        let mut rng = RngStream::new(6, 0);
        let (q, _) = qr_thin(&DenseMatrix::gaussian(30, 6, 1.0, &mut rng)).unwrap();
        let sv = singular_values(&q).unwrap();
        assert_eq!(sv.len(), 6);
        assert!(sv.iter().all(|s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn singular_values_match_gram_eigenvalues() {
        let mut rng = RngStream::new(7, 0);
        for (n, d) in [(20, 5), (7, 5), (5, 9)] {
            let a = DenseMatrix::gaussian(n, d, 1.0, &mut rng);
            let sv = singular_values(&a).unwrap();
            assert_eq!(sv.len(), n.min(d));
            let g = if n >= d { a.gram() } else { a.transpose().gram() };
            let ev = jacobi_eigenvalues(&g);
            for (s, e) in sv.iter().zip(&ev) {
                assert!((s * s - e).abs() <= 1e-8 * e.abs().max(1e-12), "{s} {e}");
            }
        }
    }

    #[test]
    fn identical_singular_values() {
        let mut rng = RngStream::new(8, 0);
        let a = make_identical_singular_matrix(4, 4, 1.0, &mut rng).unwrap();
        assert!(a.gram().sub(&DenseMatrix::identity(4)).unwrap().max_abs() < 1e-12);

        let a = make_identical_singular_matrix(50, 10, 2.5, &mut rng).unwrap();
        let sv = singular_values(&a).unwrap();
        assert!(sv.iter().all(|s| (s - 2.5).abs() < 1e-10));

        assert!(make_identical_singular_matrix(3, 4, 1.0, &mut rng).is_err());
        assert!(make_identical_singular_matrix(4, 3, 0.0, &mut rng).is_err());
    }

    #[test]
    fn identical_singular_values_large_regime() {
        let mut rng = RngStream::new(9, 0);
        let a = make_identical_singular_matrix(1000, 100, 1.0, &mut rng).unwrap();
        let sv = singular_values(&a).unwrap();
        assert!(sv.iter().all(|s| (s - 1.0).abs() <= 1e-8));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]

            #[test]
            fn spd_solve_residual(seed in any::<u64>(), n in 1usize..12) {
                let mut rng = RngStream::new(seed, 0);
                let m = random_spd(n, &mut rng);
                let g = DenseVector::gaussian(n, 1.0, &mut rng);
                let x = solve_spd(&m, &g).unwrap();
                let r = m.matvec(&x).sub(&g);
                prop_assert!(r.norm() <= 1e-8 * g.norm());
            }

            #[test]
            fn singular_values_scale(seed in any::<u64>(), c in -5.0f64..5.0) {
                let mut rng = RngStream::new(seed, 1);
                let a = DenseMatrix::gaussian(9, 4, 1.0, &mut rng);
                let s1 = singular_values(&a.scaled(c)).unwrap();
                let s0 = singular_values(&a).unwrap();
                for (x, y) in s1.iter().zip(s0.iter()) {
                    prop_assert!((x - c.abs() * y).abs() <= 1e-10 * (1.0 + y));
                }
            }

            #[test]
            fn identical_sv_gram(seed in any::<u64>(), d in 1usize..8, extra in 0usize..20, sigma in 0.1f64..4.0) {
                let mut rng = RngStream::new(seed, 2);
                let a = make_identical_singular_matrix(d + extra, d, sigma, &mut rng).unwrap();
                let mut target = DenseMatrix::identity(d);
                target.scale_in_place(sigma * sigma);
                let err = a.gram().sub(&target).unwrap().frobenius_norm();
                prop_assert!(err <= 1e-6 * sigma * sigma * d as f64);
            }
        }
    }
}
