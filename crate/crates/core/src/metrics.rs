//! Inner products, matrix entropy and reconstruction metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::perm::{kendall_tau, Permutation};
use crate::scalar::Scalar;

/// Entries at or below this are treated as zero inside `log`.
const LOG_FLOOR: f64 = 1e-300;

/// `⟨A, B⟩_F = trace(AᵀB)`
pub fn frobenius_inner<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<T> {
    a.check_same_shape(b)?;
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| x * y)
        .sum())
}

/// `h(P) = −Σ P_ij log P_ij` with `0 log 0 = 0`.
pub fn entropy<T: Scalar>(p: &Matrix<T>) -> Result<T> {
    let floor = T::of(LOG_FLOOR).max(T::min_positive_value());
    let mut h = T::zero();
    for (k, &v) in p.as_slice().iter().enumerate() {
        if v < T::zero() || v.is_nan() {
            return Err(Error::Domain(format!(
                "entropy of negative entry {v} at ({}, {})",
                k / p.cols(),
                k % p.cols()
            )));
        }
        if v > T::zero() {
            h = h - v * v.max(floor).ln();
        }
    }
    Ok(h)
}

/// Per-sequence reconstruction quality. Batch figures are means of these.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub prop_any_wrong: f64,
    pub prop_wrong: f64,
    pub kendall_tau: f64,
    pub l1: f64,
    pub l2: f64,
}

impl MetricsReport {
    /// Mean over reports, summed in slice order.
    pub fn mean(reports: &[MetricsReport]) -> MetricsReport {
        if reports.is_empty() {
            return MetricsReport::default();
        }
        let n = reports.len() as f64;
        let mut acc = MetricsReport::default();
        for r in reports {
            acc.prop_any_wrong += r.prop_any_wrong;
            acc.prop_wrong += r.prop_wrong;
            acc.kendall_tau += r.kendall_tau;
            acc.l1 += r.l1;
            acc.l2 += r.l2;
        }
        MetricsReport {
            prop_any_wrong: acc.prop_any_wrong / n,
            prop_wrong: acc.prop_wrong / n,
            kendall_tau: acc.kendall_tau / n,
            l1: acc.l1 / n,
            l2: acc.l2 / n,
        }
    }
}

/// Scores `predicted_perm` applied to `scrambled` against `truth`.
///
/// `l1` is the mean absolute error and `l2` the root mean squared error over
/// all scalar components of the reconstruction.
pub fn reconstruction_metrics<T: Scalar>(
    truth: &[Vec<T>],
    predicted_perm: &Permutation,
    scrambled: &[Vec<T>],
    true_perm: &Permutation,
) -> Result<MetricsReport> {
    let n = truth.len();
    if scrambled.len() != n || predicted_perm.len() != n || true_perm.len() != n {
        return Err(Error::Dimension(format!(
            "truth {n}, scrambled {}, predicted {}, true {}",
            scrambled.len(),
            predicted_perm.len(),
            true_perm.len()
        )));
    }
    let wrong = predicted_perm.hamming(true_perm)?;
    let recon = predicted_perm.reconstruct(scrambled)?;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut count = 0usize;
    for (t, r) in truth.iter().zip(&recon) {
        if t.len() != r.len() {
            return Err(Error::Dimension(format!(
                "item widths {} and {}",
                t.len(),
                r.len()
            )));
        }
        for (&a, &b) in t.iter().zip(r) {
            let d = (a - b).as_f64();
            abs += d.abs();
            sq += d * d;
            count += 1;
        }
    }
    let denom = count.max(1) as f64;
    Ok(MetricsReport {
        prop_any_wrong: if wrong > 0 { 1.0 } else { 0.0 },
        prop_wrong: if n == 0 { 0.0 } else { wrong as f64 / n as f64 },
        kendall_tau: kendall_tau(predicted_perm, true_perm)?,
        l1: abs / denom,
        l2: (sq / denom).sqrt(),
    })
}
