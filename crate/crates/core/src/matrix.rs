//! Dense row-major matrices and the two validated square-matrix newtypes
//! used throughout the crate.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default feasibility tolerance for doubly stochastic matrices.
pub const DEFAULT_DS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; ragged input names the first bad row.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Format {
                    row: i,
                    reason: format!("expected {cols} columns, found {}", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Column vector.
    pub fn column(values: &[T]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self * other`
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let orow = other.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(orow) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * otherᵀ`
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "matmul_nt {:?} x {:?}ᵀ",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Self::from_fn(self.rows, other.rows, |i, j| {
            self.row(i)
                .iter()
                .zip(other.row(j))
                .map(|(&a, &b)| a * b)
                .sum()
        }))
    }

    /// `selfᵀ * other`
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::Dimension(format!(
                "matmul_tn {:?}ᵀ x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let orow = other.row(k);
            for i in 0..self.cols {
                let a = self[(k, i)];
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out.row_mut(i).iter_mut().zip(orow) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.rows).map(|i| self.row(i).iter().copied().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<T> {
        let mut sums = vec![T::zero(); self.cols];
        for i in 0..self.rows {
            for (s, &v) in sums.iter_mut().zip(self.row(i)) {
                *s = *s + v;
            }
        }
        sums
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Position of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|k| (k / self.cols, k % self.cols))
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Square matrix of finite reals parameterizing a (soft) permutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix<T>", into = "Matrix<T>")]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct LogitsMatrix<T: Scalar>(Matrix<T>);

impl<T: Scalar> LogitsMatrix<T> {
    pub fn new(m: Matrix<T>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "logits must be square, got {:?}",
                m.shape()
            )));
        }
        if let Some((i, j)) = m.first_non_finite() {
            return Err(Error::Domain(format!(
                "non-finite logit {} at ({i}, {j})",
                m[(i, j)]
            )));
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn zeros(n: usize) -> Self {
        Self(Matrix::zeros(n, n))
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.0
    }

    /// `self + other`, re-validated.
    pub fn perturbed(&self, noise: &Matrix<T>) -> Result<Self> {
        Self::new(self.0.add(noise)?)
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }
}

impl<T: Scalar> TryFrom<Matrix<T>> for LogitsMatrix<T> {
    type Error = Error;

    fn try_from(m: Matrix<T>) -> Result<Self> {
        Self::new(m)
    }
}

impl<T: Scalar> From<LogitsMatrix<T>> for Matrix<T> {
    fn from(l: LogitsMatrix<T>) -> Self {
        l.0
    }
}

impl<T: Scalar> Index<(usize, usize)> for LogitsMatrix<T> {
    type Output = T;

    fn index(&self, idx: (usize, usize)) -> &T {
        &self.0[idx]
    }
}

/// Element of the Birkhoff polytope, up to a feasibility tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct DoublyStochasticMatrix<T: Scalar> {
    entries: Matrix<T>,
    tol: T,
}

impl<T: Scalar> DoublyStochasticMatrix<T> {
    /// Validates entries in `[0, 1]` and marginals within `tol` of one.
    pub fn new(entries: Matrix<T>, tol: T) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::Dimension(format!(
                "doubly stochastic matrix must be square, got {:?}",
                entries.shape()
            )));
        }
        if let Some(bad) = entries
            .as_slice()
            .iter()
            .find(|v| !(**v >= T::zero() && **v <= T::one() + tol))
        {
            return Err(Error::Domain(format!("entry {bad} outside [0, 1]")));
        }
        let ds = Self { entries, tol };
        let violation = ds.marginal_violation();
        if violation > tol {
            return Err(Error::Feasibility {
                violation: violation.as_f64(),
                tol: tol.as_f64(),
            });
        }
        Ok(ds)
    }

    /// Wraps operator output without the feasibility check; truncated
    /// Sinkhorn at low temperature is only approximately feasible.
    pub(crate) fn unchecked(entries: Matrix<T>, tol: T) -> Self {
        Self { entries, tol }
    }

    pub fn uniform(n: usize) -> Self {
        let v = T::one() / T::of(n as f64);
        Self::unchecked(Matrix::filled(n, n, v), T::of(DEFAULT_DS_TOL))
    }

    pub fn n(&self) -> usize {
        self.entries.rows()
    }

    pub fn tol(&self) -> T {
        self.tol
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.entries
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.entries
    }

    /// Largest deviation of any row or column sum from one.
    pub fn marginal_violation(&self) -> T {
        self.entries
            .row_sums()
            .into_iter()
            .chain(self.entries.col_sums())
            .fold(T::zero(), |m, s| m.max((s - T::one()).abs()))
    }

    pub fn is_feasible(&self) -> bool {
        self.marginal_violation() <= self.tol
    }

    pub fn check_feasible(&self) -> Result<()> {
        let violation = self.marginal_violation();
        if violation > self.tol {
            return Err(Error::Feasibility {
                violation: violation.as_f64(),
                tol: self.tol.as_f64(),
            });
        }
        Ok(())
    }
}

impl<T: Scalar> Index<(usize, usize)> for DoublyStochasticMatrix<T> {
    type Output = T;

    fn index(&self, idx: (usize, usize)) -> &T {
        &self.entries[idx]
    }
}
