//! Truncated, temperature-scaled Sinkhorn operator.
//!
//! `S^L(X/τ)` starts from `exp(X/τ)` and applies `L` rounds of row
//! normalization followed by column normalization. The default path runs in
//! log space, where each normalization subtracts a row or column
//! log-sum-exp, so small temperatures cannot overflow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DoublyStochasticMatrix, LogitsMatrix, Matrix, DEFAULT_DS_TOL};
use crate::metrics::{entropy, frobenius_inner};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// Temperature τ.
    pub tau: f64,
    /// Number of row-then-column rounds L.
    pub iterations: usize,
    pub log_space: bool,
    /// Apply one more row normalization after the last column pass.
    pub final_row_pass: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            iterations: 20,
            log_space: true,
            final_row_pass: false,
        }
    }
}

impl SinkhornConfig {
    pub fn new(tau: f64, iterations: usize) -> Self {
        Self {
            tau,
            iterations,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Numerically stable `log Σ exp(v)`.
pub fn log_sum_exp<T: Scalar>(v: impl Iterator<Item = T> + Clone) -> T {
    let m = v.clone().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + v.map(|x| (x - m).exp()).sum::<T>().ln()
}

/// Subtracts each row's log-sum-exp in place.
pub fn log_normalize_rows<T: Scalar>(m: &mut Matrix<T>) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let lse = log_sum_exp(row.iter().copied());
        row.iter_mut().for_each(|v| *v = *v - lse);
    }
}

/// Subtracts each column's log-sum-exp in place.
pub fn log_normalize_cols<T: Scalar>(m: &mut Matrix<T>) {
    let (rows, cols) = m.shape();
    for j in 0..cols {
        let lse = log_sum_exp((0..rows).map(|i| m[(i, j)]));
        for i in 0..rows {
            m[(i, j)] = m[(i, j)] - lse;
        }
    }
}

/// [`log_normalize_rows`] that also returns the row softmax weights, using
/// one `exp` per entry. The normalized values are bitwise identical.
pub(crate) fn log_normalize_rows_weighted<T: Scalar>(m: &mut Matrix<T>) -> Matrix<T> {
    let (rows, cols) = m.shape();
    let mut w = Matrix::zeros(rows, cols);
    for i in 0..rows {
        let row = m.row_mut(i);
        let lse = fused_lse(row.iter().copied(), w.row_mut(i));
        row.iter_mut().for_each(|v| *v = *v - lse);
    }
    w
}

/// Column counterpart of [`log_normalize_rows_weighted`].
pub(crate) fn log_normalize_cols_weighted<T: Scalar>(m: &mut Matrix<T>) -> Matrix<T> {
    let (rows, cols) = m.shape();
    let mut w = Matrix::zeros(rows, cols);
    let mut buf = vec![T::zero(); rows];
    for j in 0..cols {
        let lse = fused_lse((0..rows).map(|i| m[(i, j)]), &mut buf);
        for i in 0..rows {
            m[(i, j)] = m[(i, j)] - lse;
            w[(i, j)] = buf[i];
        }
    }
    w
}

/// Same arithmetic as [`log_sum_exp`]; leaves `softmax(v)` in `weights`.
fn fused_lse<T: Scalar>(v: impl Iterator<Item = T> + Clone, weights: &mut [T]) -> T {
    let m = v.clone().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        weights.iter_mut().for_each(|w| *w = T::nan());
        return m;
    }
    for (w, x) in weights.iter_mut().zip(v) {
        *w = (x - m).exp();
    }
    let total: T = weights.iter().copied().sum();
    weights.iter_mut().for_each(|w| *w = *w / total);
    m + total.ln()
}

/// `log S^L(X/τ)`.
pub fn log_sinkhorn<T: Scalar>(x: &LogitsMatrix<T>, cfg: &SinkhornConfig) -> Result<Matrix<T>> {
    cfg.validate()?;
    let mut log_s = x.matrix().scale(T::one() / T::of(cfg.tau));
    for _ in 0..cfg.iterations {
        log_normalize_rows(&mut log_s);
        log_normalize_cols(&mut log_s);
    }
    if cfg.final_row_pass {
        log_normalize_rows(&mut log_s);
    }
    Ok(log_s)
}

/// `S^L(X/τ)`; the last pass applied is a column normalization unless
/// `final_row_pass` is set.
pub fn sinkhorn<T: Scalar>(
    x: &LogitsMatrix<T>,
    cfg: &SinkhornConfig,
) -> Result<DoublyStochasticMatrix<T>> {
    cfg.validate()?;
    let tol = T::of(DEFAULT_DS_TOL);
    if !cfg.log_space {
        if let Some(s) = direct_sinkhorn(x, cfg) {
            return Ok(DoublyStochasticMatrix::unchecked(s, tol));
        }
    }
    let s = log_sinkhorn(x, cfg)?.map(T::exp);
    Ok(DoublyStochasticMatrix::unchecked(s, tol))
}

/// Plain-space iteration. `None` when `exp(X/τ)` leaves the finite positive
/// range, in which case the caller falls back to log space.
fn direct_sinkhorn<T: Scalar>(x: &LogitsMatrix<T>, cfg: &SinkhornConfig) -> Option<Matrix<T>> {
    let inv_tau = T::one() / T::of(cfg.tau);
    let mut s = x.matrix().map(|v| (v * inv_tau).exp());
    if s.as_slice().iter().any(|&v| !v.is_finite() || v <= T::zero()) {
        return None;
    }
    let normalize_rows = |s: &mut Matrix<T>| {
        for i in 0..s.rows() {
            let row = s.row_mut(i);
            let total: T = row.iter().copied().sum();
            row.iter_mut().for_each(|v| *v = *v / total);
        }
    };
    for _ in 0..cfg.iterations {
        normalize_rows(&mut s);
        let sums = s.col_sums();
        for i in 0..s.rows() {
            for (v, &c) in s.row_mut(i).iter_mut().zip(&sums) {
                *v = *v / c;
            }
        }
    }
    if cfg.final_row_pass {
        normalize_rows(&mut s);
    }
    s.all_finite().then_some(s)
}

/// `⟨P, X⟩_F + τ h(P)`, the entropy-regularized assignment objective whose
/// maximizer over the Birkhoff polytope is `S(X/τ)`.
pub fn entropy_reg_objective<T: Scalar>(
    p: &DoublyStochasticMatrix<T>,
    x: &LogitsMatrix<T>,
    tau: T,
) -> Result<T> {
    if !(tau > T::zero()) {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    p.check_feasible()?;
    Ok(frobenius_inner(p.matrix(), x.matrix())? + tau * entropy(p.matrix())?)
}
