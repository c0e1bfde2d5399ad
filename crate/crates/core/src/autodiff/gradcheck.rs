//! Central finite differences against tape gradients.

use crate::error::{Error, Result};

/// Default denominator floor for relative errors.
pub const REL_FLOOR: f64 = 1e-8;

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// `max_k |a_k − n_k| / max(|a_k|, |n_k|, 1e-8)`
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// `(f(x + h e_k) − f(x − h e_k)) / 2h` for every coordinate.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x0: &[f64], step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::Config(format!("step must be positive, got {step}")));
    }
    let mut x = x0.to_vec();
    let mut grad = Vec::with_capacity(x0.len());
    for k in 0..x0.len() {
        x[k] = x0[k] + step;
        let up = f(&x);
        x[k] = x0[k] - step;
        let down = f(&x);
        x[k] = x0[k];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Domain(format!(
                "non-finite objective perturbing coordinate {k}: {up}, {down}"
            )));
        }
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// Compares the gradient returned by `f` at `x0` with central differences
/// of its value.
pub fn finite_diff_check<F>(f: F, x0: &[f64], step: f64) -> Result<GradCheck>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    finite_diff_check_floor(f, x0, step, REL_FLOOR)
}

/// As [`finite_diff_check`] with a custom denominator floor. Components whose
/// true derivative sits below the central-difference roundoff (about
/// `1e-16 |f| / step`) need a floor well above that to be scored fairly.
pub fn finite_diff_check_floor<F>(f: F, x0: &[f64], step: f64, floor: f64) -> Result<GradCheck>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (value, analytic) = f(x0)?;
    if !value.is_finite() {
        return Err(Error::Domain(format!("non-finite objective {value} at x0")));
    }
    if analytic.len() != x0.len() {
        return Err(Error::Dimension(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            x0.len()
        )));
    }
    let numeric = central_difference(|x| f(x).map_or(f64::NAN, |(v, _)| v), x0, step)?;
    let mut max_rel_error = 0.0;
    let mut worst_index = None;
    for (k, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_index = Some(k);
        }
    }
    Ok(GradCheck {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let f = |x: &[f64]| Ok((x.iter().map(|v| v * v).sum(), x.iter().map(|v| 2.0 * v).collect()));
        // dyadic points and step keep every evaluation exact
        let r = finite_diff_check(f, &[0.375, -1.75, 2.5, 10.0], 1.0 / 1024.0).unwrap();
        assert!(r.max_rel_error <= 1e-9, "{}", r.max_rel_error);
    }

    #[test]
    fn constant_has_zero_error() {
        let f = |x: &[f64]| Ok((4.2, vec![0.0; x.len()]));
        let r = finite_diff_check(f, &[1.0, 2.0, 3.0], 1e-5).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.worst_index, None);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let f = |x: &[f64]| Ok((x[0] * x[0], vec![x[0]]));
        assert!(finite_diff_check(f, &[1.0], 1e-5).unwrap().max_rel_error > 0.4);
    }

    #[test]
    fn non_finite_objective_is_a_domain_error() {
        let f = |x: &[f64]| Ok((1.0 / x[0], vec![-1.0 / (x[0] * x[0])]));
        assert!(matches!(finite_diff_check(f, &[0.0], 1e-5), Err(Error::Domain(_))));
        let g = |x: &[f64]| Ok(((x[0] - 1.0).ln(), vec![1.0 / (x[0] - 1.0)]));
        assert!(matches!(finite_diff_check(g, &[1.0 + 1e-6], 1e-5), Err(Error::Domain(_))));
    }
}
