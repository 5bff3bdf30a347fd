//! Small dense matrices: general, symmetric and certified positive definite.
//!
//! Dimensions here are single digits, so storage is a flat row-major `Vec<f64>`
//! and the eigensolver is a cyclic Jacobi sweep over the full spectrum.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Condition numbers above this emit a `log::warn!` but do not fail.
pub const CONDITION_WARN_THRESHOLD: f64 = 1e12;

const JACOBI_MAX_SWEEPS: usize = 100;

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("matrix dimensions must be at least 1x1"));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "matrix entries",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("matrix entries must be finite"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(
            rows > 0 && cols > 0,
            "matrix dimensions must be at least 1x1"
        );
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// A 1 x n matrix holding `row`.
    pub fn row_vector(row: &[f64]) -> Result<Self> {
        Self::new(1, row.len(), row.to_vec())
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::invalid("ragged rows"));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul inner dimensions");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec dimensions");
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `selfᵀ v` without forming the transpose.
    pub fn tr_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "transposed matvec dimensions");
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * vr;
            }
        }
        out
    }

    /// `selfᵀ self`.
    pub fn gram(&self) -> SymMat {
        SymMat::symmetrize(self.transpose().matmul(self))
    }

    pub fn scaled(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Mat) -> Mat {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "elementwise dimensions"
        );
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Square symmetric matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMat(Mat);

impl SymMat {
    /// Accepts `m` if it is square, finite and symmetric to within
    /// `1e-12 * max(1, max|m|)`.
    pub fn new(m: Mat) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                context: "symmetric matrix columns",
                expected: m.rows,
                got: m.cols,
            });
        }
        if !m.is_finite() {
            return Err(Error::invalid("matrix entries must be finite"));
        }
        let tol = 1e-12 * m.max_abs().max(1.0);
        for r in 0..m.rows {
            for c in r + 1..m.cols {
                if (m[(r, c)] - m[(c, r)]).abs() > tol {
                    return Err(Error::invalid(format!(
                        "matrix is not symmetric at ({r}, {c})"
                    )));
                }
            }
        }
        Ok(Self::symmetrize(m))
    }

    /// `(m + mᵀ) / 2`.
    pub fn symmetrize(mut m: Mat) -> Self {
        assert!(m.is_square(), "symmetrize needs a square matrix");
        let n = m.rows;
        for r in 0..n {
            for c in r + 1..n {
                let v = 0.5 * (m[(r, c)] + m[(c, r)]);
                m[(r, c)] = v;
                m[(c, r)] = v;
            }
        }
        SymMat(m)
    }

    pub fn identity(n: usize) -> Self {
        SymMat(Mat::identity(n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMat(Mat::zeros(n, n))
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        SymMat(Mat::from_diag(diag))
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }

    pub fn scaled(&self, s: f64) -> SymMat {
        SymMat(self.0.scaled(s))
    }

    pub fn add(&self, other: &SymMat) -> SymMat {
        SymMat(self.0.add(&other.0))
    }

    pub fn sub(&self, other: &SymMat) -> SymMat {
        SymMat(self.0.sub(&other.0))
    }

    /// `vᵀ self v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        self.0.matvec(v).iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

impl Index<(usize, usize)> for SymMat {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// Symmetric matrix certified positive definite.
#[derive(Clone, Debug)]
pub struct SpdMat {
    mat: SymMat,
    /// `(λ_min, λ_max)` when known from certification.
    extrema: Option<(f64, f64)>,
}

impl PartialEq for SpdMat {
    fn eq(&self, other: &Self) -> bool {
        self.mat == other.mat
    }
}

impl SpdMat {
    /// Certifies `m` via its smallest eigenvalue.
    pub fn new(m: SymMat) -> Result<Self> {
        let (lo, hi) = sym_eig_extrema(&m)?;
        if lo <= 0.0 {
            return Err(Error::NotPositiveDefinite { lambda_min: lo });
        }
        let spd = Self {
            mat: m,
            extrema: Some((lo, hi)),
        };
        spd.warn_if_stiff("certification");
        Ok(spd)
    }

    /// Wraps a matrix known to be positive definite by construction.
    pub(crate) fn new_unchecked(m: SymMat) -> Self {
        Self {
            mat: m,
            extrema: None,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mat: SymMat::identity(n),
            extrema: Some((1.0, 1.0)),
        }
    }

    pub fn from_diag(diag: &[f64]) -> Result<Self> {
        Self::new(SymMat::from_diag(diag))
    }

    pub fn dim(&self) -> usize {
        self.mat.dim()
    }

    pub fn as_sym(&self) -> &SymMat {
        &self.mat
    }

    pub fn as_mat(&self) -> &Mat {
        self.mat.as_mat()
    }

    pub fn into_sym(self) -> SymMat {
        self.mat
    }

    /// `λ_max / λ_min` if the extrema were computed at construction.
    pub fn condition_number(&self) -> Option<f64> {
        self.extrema.map(|(lo, hi)| hi / lo)
    }

    /// Positive rescaling keeps definiteness.
    pub fn scaled(&self, s: f64) -> Result<SpdMat> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::invalid(format!("scale factor {s} must be positive")));
        }
        Ok(Self {
            mat: self.mat.scaled(s),
            extrema: self.extrema.map(|(lo, hi)| (lo * s, hi * s)),
        })
    }

    fn warn_if_stiff(&self, op: &str) {
        if let Some(cond) = self.condition_number() {
            if cond > CONDITION_WARN_THRESHOLD {
                log::warn!("{op}: SPD input has condition number {cond:e}");
            }
        }
    }
}

impl Index<(usize, usize)> for SpdMat {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.mat[idx]
    }
}

/// All eigenvalues of `a` in ascending order (cyclic Jacobi).
pub fn sym_eigenvalues(a: &SymMat) -> Result<Vec<f64>> {
    if !a.as_mat().is_finite() {
        return Err(Error::invalid("eigenvalues of a non-finite matrix"));
    }
    let n = a.dim();
    let mut m = a.as_mat().clone();
    let scale = m.max_abs();
    if scale == 0.0 {
        return Ok(vec![0.0; n]);
    }
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|r| (0..n).filter(move |&c| c != r).map(move |c| (r, c)))
            .map(|(r, c)| m[(r, c)] * m[(r, c)])
            .sum();
        if off.sqrt() <= f64::EPSILON * 1e-3 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// `(λ_min, λ_max)` of a symmetric matrix.
pub fn sym_eig_extrema(a: &SymMat) -> Result<(f64, f64)> {
    let eig = sym_eigenvalues(a)?;
    Ok((eig[0], eig[eig.len() - 1]))
}

/// Lower-triangular `L` with `L Lᵀ = a`.
///
/// Fails with [`Error::Degenerate`] naming the first nonpositive pivot.
pub fn cholesky_lower(a: &SymMat) -> Result<Mat> {
    let n = a.dim();
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::Degenerate { pivot: j, value: d });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` in place.
fn cholesky_solve_in_place(l: &Mat, b: &mut [f64]) {
    let n = l.rows();
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[(k, i)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

/// `X` with `A X = B`, via Cholesky.
pub fn solve_spd(a: &SpdMat, b: &Mat) -> Result<Mat> {
    if a.dim() != b.rows() {
        return Err(Error::DimensionMismatch {
            context: "solve_spd right-hand side rows",
            expected: a.dim(),
            got: b.rows(),
        });
    }
    a.warn_if_stiff("solve_spd");
    let l = cholesky_lower(a.as_sym())?;
    let n = a.dim();
    let mut x = Mat::zeros(n, b.cols());
    let mut col = vec![0.0; n];
    for c in 0..b.cols() {
        for (r, v) in col.iter_mut().enumerate() {
            *v = b[(r, c)];
        }
        cholesky_solve_in_place(&l, &mut col);
        for (r, v) in col.iter().enumerate() {
            x[(r, c)] = *v;
        }
    }
    Ok(x)
}

/// Vector right-hand side variant of [`solve_spd`].
pub fn solve_spd_vec(a: &SpdMat, b: &[f64]) -> Result<Vec<f64>> {
    if a.dim() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "solve_spd right-hand side length",
            expected: a.dim(),
            got: b.len(),
        });
    }
    a.warn_if_stiff("solve_spd");
    let l = cholesky_lower(a.as_sym())?;
    let mut x = b.to_vec();
    cholesky_solve_in_place(&l, &mut x);
    Ok(x)
}

/// Symmetrized inverse of an SPD matrix.
pub fn inv_spd(a: &SpdMat) -> Result<SpdMat> {
    let inv = solve_spd(a, &Mat::identity(a.dim()))?;
    Ok(SpdMat {
        mat: SymMat::symmetrize(inv),
        extrema: a.extrema.map(|(lo, hi)| (1.0 / hi, 1.0 / lo)),
    })
}
