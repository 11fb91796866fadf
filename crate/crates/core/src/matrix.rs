//! Dense complex matrices, LU solves, singular values and numerical rank.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::rng;

pub type Vector = DVector<Complex64>;

pub const EPS: f64 = f64::EPSILON;

/// Dense complex matrix with at least one row and column and finite entries.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    data: DMatrix<Complex64>,
}

impl DenseMatrix {
    /// Builds a matrix from entries listed in row-major order.
    pub fn new(rows: usize, cols: usize, entries: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(LabError::InvalidMatrix(format!(
                "shape {rows}x{cols} has an empty dimension"
            )));
        }
        if entries.len() != rows * cols {
            return Err(LabError::DimensionMismatch {
                expected: format!("{} entries", rows * cols),
                found: format!("{} entries", entries.len()),
            });
        }
        Self::from_dmatrix(DMatrix::from_row_slice(rows, cols, &entries))
    }

    pub fn from_real(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        Self::new(
            rows,
            cols,
            entries.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        )
    }

    pub fn from_dmatrix(data: DMatrix<Complex64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(LabError::InvalidMatrix("empty matrix".into()));
        }
        if let Some(pos) = data
            .iter()
            .position(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            let (j, i) = (pos / data.nrows(), pos % data.nrows());
            return Err(LabError::InvalidMatrix(format!(
                "non-finite entry at ({}, {})",
                i + 1,
                j + 1
            )));
        }
        Ok(Self { data })
    }

    pub fn from_real_dmatrix(data: &DMatrix<f64>) -> Result<Self> {
        Self::from_dmatrix(data.map(|x| Complex64::new(x, 0.0)))
    }

    /// Wraps arithmetic results without re-validating.
    pub(crate) fn wrap(data: DMatrix<Complex64>) -> Self {
        debug_assert!(data.nrows() > 0 && data.ncols() > 0);
        Self { data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::wrap(DMatrix::zeros(rows.max(1), cols.max(1)))
    }

    pub fn identity(n: usize) -> Self {
        Self::wrap(DMatrix::identity(n.max(1), n.max(1)))
    }

    pub fn from_diagonal(values: &[Complex64]) -> Result<Self> {
        if values.is_empty() {
            return Err(LabError::InvalidMatrix("empty diagonal".into()));
        }
        Self::from_dmatrix(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    pub fn from_real_diagonal(values: &[f64]) -> Result<Self> {
        let values: Vec<Complex64> = values.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Self::from_diagonal(&values)
    }

    pub fn column(v: &Vector) -> Result<Self> {
        Self::from_dmatrix(DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
    }

    /// Block-diagonal concatenation.
    pub fn block_diagonal(blocks: &[DenseMatrix]) -> Result<Self> {
        if blocks.is_empty() {
            return Err(LabError::InvalidMatrix("no blocks".into()));
        }
        let rows: usize = blocks.iter().map(|b| b.rows()).sum();
        let cols: usize = blocks.iter().map(|b| b.cols()).sum();
        let mut out = DMatrix::zeros(rows, cols);
        let (mut r, mut c) = (0, 0);
        for b in blocks {
            out.view_mut((r, c), (b.rows(), b.cols()))
                .copy_from(&b.data);
            r += b.rows();
            c += b.cols();
        }
        Ok(Self::wrap(out))
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[(i, j)]
    }

    pub fn as_dmatrix(&self) -> &DMatrix<Complex64> {
        &self.data
    }

    pub fn into_dmatrix(self) -> DMatrix<Complex64> {
        self.data
    }

    /// Entries in row-major order.
    pub fn to_row_major(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                out.push(self.data[(i, j)]);
            }
        }
        out
    }

    pub fn is_real(&self) -> bool {
        self.data.iter().all(|z| z.im == 0.0)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Spectral norm (largest singular value).
    pub fn norm2(&self) -> f64 {
        singular_values(self).largest()
    }

    pub fn adjoint(&self) -> Self {
        Self::wrap(self.data.adjoint())
    }

    pub fn transpose(&self) -> Self {
        Self::wrap(self.data.transpose())
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self::wrap(&self.data * s)
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(Complex64::new(s, 0.0))
    }

    /// `A - shift * I`.
    pub fn shifted(&self, shift: Complex64) -> Self {
        let mut data = self.data.clone();
        for i in 0..self.rows().min(self.cols()) {
            data[(i, i)] -= shift;
        }
        Self::wrap(data)
    }

    pub fn matvec(&self, x: &Vector) -> Vector {
        &self.data * x
    }

    pub fn checked_mul(&self, other: &DenseMatrix) -> Result<Self> {
        if self.cols() != other.rows() {
            return Err(LabError::DimensionMismatch {
                expected: format!("{} rows", self.cols()),
                found: format!("{} rows", other.rows()),
            });
        }
        Ok(Self::wrap(&self.data * &other.data))
    }

    pub fn checked_add(&self, other: &DenseMatrix) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self::wrap(&self.data + &other.data))
    }

    fn same_shape(&self, other: &DenseMatrix) -> Result<()> {
        if self.rows() != other.rows() || self.cols() != other.cols() {
            return Err(LabError::DimensionMismatch {
                expected: format!("{}x{}", self.rows(), self.cols()),
                found: format!("{}x{}", other.rows(), other.cols()),
            });
        }
        Ok(())
    }

    /// Integer power of a square matrix by repeated multiplication.
    pub fn pow(&self, k: u32) -> Self {
        assert!(self.is_square(), "pow requires a square matrix");
        let mut out = DMatrix::identity(self.rows(), self.cols());
        for _ in 0..k {
            out = &out * &self.data;
        }
        Self::wrap(out)
    }

    /// Rank-one outer product `u v^T` (plain transpose, no conjugation).
    pub fn outer(u: &Vector, v: &Vector) -> Self {
        Self::wrap(u * v.transpose())
    }

    /// Sub-block copy.
    pub fn block(&self, row: usize, col: usize, rows: usize, cols: usize) -> Self {
        Self::wrap(self.data.view((row, col), (rows, cols)).into_owned())
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows(), self.cols())?;
        for i in 0..self.rows() {
            write!(f, " ")?;
            for j in 0..self.cols() {
                let z = self.data[(i, j)];
                if z.im == 0.0 {
                    write!(f, " {:>10.4}", z.re)?;
                } else {
                    write!(f, " {:>10.4}{:+.4}i", z.re, z.im)?;
                }
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Add for &DenseMatrix {
    type Output = DenseMatrix;
    fn add(self, rhs: &DenseMatrix) -> DenseMatrix {
        self.checked_add(rhs)
            .expect("shape mismatch in matrix addition")
    }
}

impl Sub for &DenseMatrix {
    type Output = DenseMatrix;
    fn sub(self, rhs: &DenseMatrix) -> DenseMatrix {
        self.same_shape(rhs)
            .expect("shape mismatch in matrix subtraction");
        DenseMatrix::wrap(&self.data - &rhs.data)
    }
}

impl Mul for &DenseMatrix {
    type Output = DenseMatrix;
    fn mul(self, rhs: &DenseMatrix) -> DenseMatrix {
        self.checked_mul(rhs)
            .expect("shape mismatch in matrix product")
    }
}

impl Neg for &DenseMatrix {
    type Output = DenseMatrix;
    fn neg(self) -> DenseMatrix {
        DenseMatrix::wrap(-&self.data)
    }
}

/// How the numerical-rank cutoff is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum RankTol {
    /// `max(rows, cols) * eps * sigma_1`.
    #[default]
    Default,
    /// Fixed cutoff.
    Absolute(f64),
    /// `factor * sigma_1`.
    Relative(f64),
}

impl RankTol {
    pub fn threshold(self, rows: usize, cols: usize, sigma_max: f64) -> f64 {
        match self {
            RankTol::Default => rows.max(cols) as f64 * EPS * sigma_max,
            RankTol::Absolute(t) => t,
            RankTol::Relative(f) => f * sigma_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    /// Nonincreasing.
    pub singular_values: Vec<f64>,
    pub numerical_rank: usize,
    pub threshold: f64,
}

impl RankReport {
    pub fn largest(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    pub fn smallest(&self) -> f64 {
        self.singular_values.last().copied().unwrap_or(0.0)
    }

    /// `sigma_1 / sigma_min`; infinite for singular input.
    pub fn condition_number(&self) -> f64 {
        let s = self.smallest();
        if s == 0.0 {
            f64::INFINITY
        } else {
            self.largest() / s
        }
    }

    /// `sigma_2 / sigma_1`, zero if fewer than two values or a zero matrix.
    pub fn second_ratio(&self) -> f64 {
        match self.singular_values.as_slice() {
            [s1, s2, ..] if *s1 > 0.0 => s2 / s1,
            _ => 0.0,
        }
    }
}

pub fn singular_values(a: &DenseMatrix) -> RankReport {
    singular_values_with(a, RankTol::Default)
}

pub fn singular_values_with(a: &DenseMatrix, tol: RankTol) -> RankReport {
    let mut sv: Vec<f64> = a.data.clone().singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    let threshold = tol.threshold(a.rows(), a.cols(), sigma_max);
    let numerical_rank = sv.iter().filter(|&&s| s > threshold).count();
    RankReport {
        singular_values: sv,
        numerical_rank,
        threshold,
    }
}

pub fn numerical_rank(a: &DenseMatrix, tol: RankTol) -> usize {
    singular_values_with(a, tol).numerical_rank
}

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct LuFactors {
    lu: DMatrix<Complex64>,
    perm: Vec<usize>,
}

impl LuFactors {
    /// Fails with `SingularMatrix` when a pivot drops below `n * eps * max|a_ij|`.
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(LabError::DimensionMismatch {
                expected: "square matrix".into(),
                found: format!("{}x{}", a.rows(), a.cols()),
            });
        }
        let n = a.rows();
        let tolerance = n as f64 * EPS * a.max_abs();
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, lu[(i, k)].norm()))
                .fold(
                    (k, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
            if pivot <= tolerance || pivot == 0.0 {
                return Err(LabError::SingularMatrix {
                    column: k,
                    pivot,
                    tolerance,
                });
            }
            if p != k {
                lu.swap_rows(p, k);
                perm.swap(p, k);
            }
            let d = lu[(k, k)];
            for i in (k + 1)..n {
                let l = lu[(i, k)] / d;
                lu[(i, k)] = l;
                if l != Complex64::new(0.0, 0.0) {
                    for j in (k + 1)..n {
                        let u = lu[(k, j)];
                        lu[(i, j)] -= l * u;
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn solve(&self, rhs: &Vector) -> Result<Vector> {
        let n = self.dim();
        if rhs.len() != n {
            return Err(LabError::DimensionMismatch {
                expected: format!("vector of length {n}"),
                found: format!("length {}", rhs.len()),
            });
        }
        let mut x: Vector = DVector::from_fn(n, |i, _| rhs[self.perm[i]]);
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        Ok(x)
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = DMatrix::zeros(rhs.rows(), rhs.cols());
        for j in 0..rhs.cols() {
            let col = self.solve(&rhs.data.column(j).into_owned())?;
            out.set_column(j, &col);
        }
        Ok(DenseMatrix::wrap(out))
    }

    pub fn inverse(&self) -> DenseMatrix {
        self.solve_matrix(&DenseMatrix::identity(self.dim()))
            .expect("identity has matching dimension")
    }
}

pub fn lu_solve(a: &DenseMatrix, rhs: &Vector) -> Result<Vector> {
    LuFactors::factor(a)?.solve(rhs)
}

/// `B = sum_{i<r} u_i v_i^T` with standard normal real factors.
pub fn random_rank_r(n: usize, r: usize, seed: u64) -> Result<DenseMatrix> {
    if n == 0 {
        return Err(LabError::InvalidMatrix("dimension must be positive".into()));
    }
    if r > n {
        return Err(LabError::InvalidRank { rank: r, n });
    }
    let mut rng = rng::seeded(seed);
    let u = rng::normal_matrix(&mut rng, n, r);
    let v = rng::normal_matrix(&mut rng, n, r);
    DenseMatrix::from_real_dmatrix(&(u * v.transpose()))
}

pub fn real_vector(values: &[f64]) -> Vector {
    DVector::from_iterator(values.len(), values.iter().map(|&x| Complex64::new(x, 0.0)))
}

pub fn vector_norm(v: &Vector) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}
