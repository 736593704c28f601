//! Dense complex linear algebra used by the precoders and the link model.
//!
//! Matrices are stored row-major. Everything here is a pure function of its
//! inputs; there is no hidden state or caching.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

/// Reciprocal condition estimate below which a Cholesky factor is rejected.
pub const SINGULAR_RCOND: f64 = 1e-14;

/// Relative tolerance for the Hermitian precondition of [`hermitian_solve`].
pub const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is singular or not positive definite (rcond estimate {rcond:.3e})")]
    SingularMatrix { rcond: f64 },
    #[error("matrix is not Hermitian (relative asymmetry {asymmetry:.3e})")]
    NotHermitian { asymmetry: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix or vector has no entries")]
    Empty,
    #[error("non-finite entry at position {0}")]
    NonFinite(usize),
}

/// Dense complex matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    /// Builds a matrix from row-major entries, rejecting empty shapes and
    /// non-finite values.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self, NumericsError> {
        if rows == 0 || cols == 0 {
            return Err(NumericsError::Empty);
        }
        if data.len() != rows * cols {
            return Err(NumericsError::DimensionMismatch(format!(
                "{} entries for a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        if let Some(pos) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(NumericsError::NonFinite(pos));
        }
        Ok(CMatrix { rows, cols, data })
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        CMatrix {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
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
    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [C64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for (j, z) in self.row(i).iter().enumerate() {
                out.data[j * self.rows + i] = z.conj();
            }
        }
        out
    }

    pub fn scaled(&self, alpha: f64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * alpha).collect(),
        }
    }

    /// Matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &CMatrix) -> Result<CMatrix, NumericsError> {
        if self.cols != rhs.rows {
            return Err(NumericsError::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                axpy(out_row, a, rhs.row(k));
            }
        }
        Ok(out)
    }

    /// Matrix-vector product `self · v`.
    pub fn mul_vec(&self, v: &[C64]) -> Result<Vec<C64>, NumericsError> {
        if self.cols != v.len() {
            return Err(NumericsError::DimensionMismatch(format!(
                "{}x{} times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm_sq(&self.data).sqrt()
    }

    pub fn sub(&self, rhs: &CMatrix) -> Result<CMatrix, NumericsError> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(NumericsError::DimensionMismatch("subtracting matrices of different shape".into()));
        }
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        })
    }

    /// Copies the listed columns, in order, into a new matrix.
    pub fn select_cols(&self, cols: &[usize]) -> CMatrix {
        let mut out = CMatrix::zeros(self.rows, cols.len());
        for i in 0..self.rows {
            let src = self.row(i);
            for (dst, &j) in out.row_mut(i).iter_mut().zip(cols) {
                *dst = src[j];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for z in self.row(i) {
                write!(f, "{:+.4}{:+.4}j ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Dense complex vector with at least one finite entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CVector(Vec<C64>);

impl CVector {
    pub fn new(data: Vec<C64>) -> Result<Self, NumericsError> {
        if data.is_empty() {
            return Err(NumericsError::Empty);
        }
        if let Some(pos) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(NumericsError::NonFinite(pos));
        }
        Ok(CVector(data))
    }

    pub fn into_inner(self) -> Vec<C64> {
        self.0
    }
}

impl std::ops::Deref for CVector {
    type Target = [C64];

    fn deref(&self) -> &[C64] {
        &self.0
    }
}

/// Unconjugated dot product `Σ aᵢ bᵢ`.
#[inline]
pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re - x.im * y.im;
        im += x.re * y.im + x.im * y.re;
    }
    C64::new(re, im)
}

/// Conjugated dot product `Σ conj(aᵢ) bᵢ`.
#[inline]
pub fn cdot(a: &[C64], b: &[C64]) -> C64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
        im += x.re * y.im - x.im * y.re;
    }
    C64::new(re, im)
}

/// `y += a·x`
#[inline]
pub fn axpy(y: &mut [C64], a: C64, x: &[C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        yi.re += a.re * xi.re - a.im * xi.im;
        yi.im += a.re * xi.im + a.im * xi.re;
    }
}

/// Squared Euclidean norm `Σ|vᵢ|²`.
#[inline]
pub fn norm_sq(v: &[C64]) -> f64 {
    v.iter().map(|z| z.re * z.re + z.im * z.im).sum()
}

/// Gram matrix `Fᴴ F`, conjugate-symmetric bit for bit.
///
/// Only the upper triangle is accumulated; the lower triangle is its exact
/// conjugate mirror and the diagonal is forced real.
pub fn gram(f: &CMatrix) -> CMatrix {
    let d = f.cols();
    let mut re = vec![0.0f64; d * d];
    let mut im = vec![0.0f64; d * d];
    for m in 0..f.rows() {
        let r = f.row(m);
        for i in 0..d {
            let (ar, ai) = (r[i].re, r[i].im);
            let row_re = &mut re[i * d + i..(i + 1) * d];
            let row_im = &mut im[i * d + i..(i + 1) * d];
            // conj(r_i)·r_j
            for ((gr, gi), z) in row_re.iter_mut().zip(row_im.iter_mut()).zip(&r[i..]) {
                *gr += ar * z.re + ai * z.im;
                *gi += ar * z.im - ai * z.re;
            }
        }
    }
    let acc: Vec<C64> = re.iter().zip(&im).map(|(&a, &b)| C64::new(a, b)).collect();
    let mut g = CMatrix::zeros(d, d);
    for i in 0..d {
        g[(i, i)] = C64::new(acc[i * d + i].re, 0.0);
        for j in i + 1..d {
            let z = acc[i * d + j];
            g[(i, j)] = z;
            g[(j, i)] = z.conj();
        }
    }
    g
}

/// Lower Cholesky factor `L` with `G = L Lᴴ`.
pub fn cholesky(g: &CMatrix) -> Result<CMatrix, NumericsError> {
    let n = g.rows();
    if g.cols() != n {
        return Err(NumericsError::DimensionMismatch(format!("{}x{} is not square", n, g.cols())));
    }
    check_hermitian(g)?;
    let mut l = CMatrix::zeros(n, n);
    let mut max_diag = 0.0f64;
    let mut min_diag = f64::INFINITY;
    for j in 0..n {
        let lj = &l.data[j * n..j * n + j];
        let pivot = g[(j, j)].re - norm_sq(lj);
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(NumericsError::SingularMatrix { rcond: 0.0 });
        }
        let djj = pivot.sqrt();
        max_diag = max_diag.max(djj);
        min_diag = min_diag.min(djj);
        l.data[j * n + j] = C64::new(djj, 0.0);
        let inv = 1.0 / djj;
        for i in j + 1..n {
            // L[i,j] = (G[i,j] − Σ_k L[i,k] conj(L[j,k])) / L[j,j]
            let s = cdot(&l.data[j * n..j * n + j], &l.data[i * n..i * n + j]);
            l.data[i * n + j] = (g[(i, j)] - s) * inv;
        }
    }
    let rcond = (min_diag / max_diag).powi(2);
    if rcond < SINGULAR_RCOND {
        return Err(NumericsError::SingularMatrix { rcond });
    }
    Ok(l)
}

fn check_hermitian(g: &CMatrix) -> Result<(), NumericsError> {
    let n = g.rows();
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in i..n {
            asym = asym.max((g[(i, j)] - g[(j, i)].conj()).norm());
        }
    }
    let scale = g.as_slice().iter().fold(0.0f64, |m, z| m.max(z.norm()));
    if scale == 0.0 {
        return Err(NumericsError::SingularMatrix { rcond: 0.0 });
    }
    let rel = asym / scale;
    if rel > HERMITIAN_TOL {
        return Err(NumericsError::NotHermitian { asymmetry: rel });
    }
    Ok(())
}

/// Solves `G X = Y` for Hermitian positive-definite `G` by Cholesky
/// factorization followed by two triangular sweeps over the rows of `Y`.
pub fn hermitian_solve(g: &CMatrix, y: &CMatrix) -> Result<CMatrix, NumericsError> {
    if g.rows() != y.rows() {
        return Err(NumericsError::DimensionMismatch(format!(
            "system of order {} with {} right-hand-side rows",
            g.rows(),
            y.rows()
        )));
    }
    let l = cholesky(g)?;
    Ok(cholesky_solve(&l, y))
}

/// Solves `L Lᴴ X = Y` given the lower factor.
pub fn cholesky_solve(l: &CMatrix, y: &CMatrix) -> CMatrix {
    let n = l.rows();
    let w = y.cols();
    let mut x = y.clone();
    // forward: L Z = Y
    for i in 0..n {
        let (done, rest) = x.data.split_at_mut(i * w);
        let xi = &mut rest[..w];
        for k in 0..i {
            let lik = l[(i, k)];
            axpy(xi, -lik, &done[k * w..(k + 1) * w]);
        }
        let inv = 1.0 / l[(i, i)].re;
        xi.iter_mut().for_each(|z| *z *= inv);
    }
    // backward: Lᴴ X = Z
    for i in (0..n).rev() {
        let (head, tail) = x.data.split_at_mut((i + 1) * w);
        let xi = &mut head[i * w..];
        for k in i + 1..n {
            let lki = l[(k, i)].conj();
            axpy(xi, -lki, &tail[(k - i - 1) * w..(k - i) * w]);
        }
        let inv = 1.0 / l[(i, i)].re;
        xi.iter_mut().for_each(|z| *z *= inv);
    }
    x
}

/// Gaussian tail probability `Q(x) = ½ erfc(x/√2)`.
pub fn qfunc(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}
