//! Randomized finite-difference gate over every differentiable primitive.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gumbel::sample_gumbel;
use crate::matrix::{LogitsMatrix, Matrix};
use crate::metrics::frobenius_inner;
use crate::rng;
use crate::sinkhorn::SinkhornConfig;
use crate::sortnet::{example_loss_and_grad, SortNetParams};

use super::dense::{dense_forward_backward, Activation, DenseLayer};
use super::gradcheck::{finite_diff_check, finite_diff_check_floor};
use super::sinkhorn_vjp::sinkhorn_vjp;
use super::tape::{Tape, Var};

/// Central-difference step used by the gate.
pub const GATE_STEP: f64 = 1e-5;

/// Relative-error floor for the sort-net loss. Biases feeding every row of
/// the logits equally act as column shifts, which Sinkhorn nearly ignores, so
/// their true derivatives (~1e-10) sit at the difference-quotient noise.
pub const SORTNET_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRow {
    pub op: String,
    pub tau: Option<f64>,
    pub instances: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

type Build = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

/// Shapes of the leaves each primitive is checked on.
fn primitives() -> Vec<(&'static str, Vec<(usize, usize)>, Build)> {
    vec![
        ("matmul", vec![(3, 4), (4, 2)], |t, v| t.matmul(v[0], v[1])),
        ("matmul_nt", vec![(3, 4), (2, 4)], |t, v| t.matmul_nt(v[0], v[1])),
        ("matmul_tn", vec![(4, 3), (4, 2)], |t, v| t.matmul_tn(v[0], v[1])),
        ("add", vec![(3, 3), (3, 3)], |t, v| t.add(v[0], v[1])),
        ("add_row_bias", vec![(4, 3), (1, 3)], |t, v| t.add_row_bias(v[0], v[1])),
        ("scale", vec![(3, 3)], |t, v| t.scale(v[0], -1.7)),
        ("relu", vec![(4, 4)], |t, v| t.relu(v[0])),
        ("exp", vec![(3, 3)], |t, v| t.exp(v[0])),
        ("log_norm_rows", vec![(4, 4)], |t, v| t.log_norm_rows(v[0])),
        ("log_norm_cols", vec![(4, 4)], |t, v| t.log_norm_cols(v[0])),
        ("sinkhorn_scaled", vec![(4, 4)], |t, v| t.sinkhorn_scaled(v[0], &SinkhornConfig::new(0.7, 10))),
        ("squared_error", vec![(3, 2)], |t, v| t.squared_error(v[0], Matrix::filled(3, 2, 0.25))),
        ("sum", vec![(3, 2)], |t, v| t.sum(v[0])),
    ]
}

fn random_matrix(r: usize, c: usize, rng: &mut impl Rng) -> Matrix<f64> {
    Matrix::from_fn(r, c, |_, _| rng.gen_range(-2.0..2.0))
}

/// Worst relative error of `⟨U, op(leaves)⟩` over random instances.
fn check_primitive(shapes: &[(usize, usize)], build: Build, instances: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let mut r = rng::stream(seed, k as u64);
        let leaves: Vec<Matrix<f64>> = shapes.iter().map(|&(a, b)| random_matrix(a, b, &mut r)).collect();
        let out_shape = {
            let mut t = Tape::new();
            let vars: Vec<Var> = leaves.iter().map(|m| t.leaf(m.clone())).collect();
            let out = build(&mut t, &vars)?;
            t.value(out).shape()
        };
        let upstream = random_matrix(out_shape.0, out_shape.1, &mut r);
        let x0: Vec<f64> = leaves.iter().flat_map(|m| m.as_slice().to_vec()).collect();
        let f = |flat: &[f64]| {
            let mut t = Tape::new();
            let mut offset = 0;
            let vars: Vec<Var> = shapes
                .iter()
                .map(|&(a, b)| {
                    let m = Matrix::from_vec(a, b, flat[offset..offset + a * b].to_vec()).expect("shape");
                    offset += a * b;
                    t.leaf(m)
                })
                .collect();
            let out = build(&mut t, &vars)?;
            let value = frobenius_inner(t.value(out), &upstream)?;
            let grads = t.backward(out, &upstream)?;
            Ok((value, vars.iter().flat_map(|&v| grads.wrt(v).into_vec()).collect()))
        };
        worst = worst.max(finite_diff_check(f, &x0, GATE_STEP)?.max_rel_error);
    }
    Ok(worst)
}

fn check_sinkhorn(tau: f64, instances: usize, seed: u64) -> Result<f64> {
    let cfg = SinkhornConfig::new(tau, 20);
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let mut r = rng::stream(seed, k as u64);
        let n = 4;
        let x0 = random_matrix(n, n, &mut r);
        let upstream = random_matrix(n, n, &mut r);
        let f = |flat: &[f64]| {
            let x = LogitsMatrix::new(Matrix::from_vec(n, n, flat.to_vec())?)?;
            let s = crate::sinkhorn::sinkhorn(&x, &cfg)?;
            let grad = sinkhorn_vjp(&x, &upstream, &cfg)?;
            Ok((frobenius_inner(s.matrix(), &upstream)?, grad.into_vec()))
        };
        worst = worst.max(finite_diff_check(f, x0.as_slice(), GATE_STEP)?.max_rel_error);
    }
    Ok(worst)
}

fn check_dense(instances: usize, seed: u64) -> Result<f64> {
    let (batch, din, dout) = (5, 3, 4);
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let mut r = rng::stream(seed, k as u64);
        let input = random_matrix(batch, din, &mut r);
        let upstream = random_matrix(batch, dout, &mut r);
        let x0: Vec<f64> = (0..dout * din + dout).map(|_| r.gen_range(-1.0..1.0)).collect();
        let f = |p: &[f64]| {
            let layer = DenseLayer {
                weight: Matrix::from_vec(dout, din, p[..dout * din].to_vec())?,
                bias: Matrix::from_vec(1, dout, p[dout * din..].to_vec())?,
                activation: Activation::Relu,
            };
            let (y, g) = dense_forward_backward(&layer, &input, &upstream)?;
            let mut grad = g.weight.into_vec();
            grad.extend(g.bias.into_vec());
            Ok((frobenius_inner(&y, &upstream)?, grad))
        };
        worst = worst.max(finite_diff_check(f, &x0, GATE_STEP)?.max_rel_error);
    }
    Ok(worst)
}

/// Full sorting-network reconstruction loss at random initialization.
fn check_sortnet_loss(tau: f64, instances: usize, seed: u64) -> Result<f64> {
    let (n, units) = (5, crate::sortnet::DEFAULT_UNITS);
    let cfg = SinkhornConfig::new(tau, 20);
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let mut r = rng::stream(seed, k as u64);
        let params = SortNetParams::init(n, units, &mut r);
        let x: Vec<f64> = (0..n).map(|_| r.gen::<f64>()).collect();
        let noise = vec![sample_gumbel::<f64>(n, rng::derive_seed(seed, k as u64)).entries];
        let f = |flat: &[f64]| {
            let p = SortNetParams::from_flat(n, units, flat)?;
            example_loss_and_grad(&x, &p, &cfg, &noise)
        };
        let check = finite_diff_check_floor(f, &params.to_flat(), GATE_STEP, SORTNET_FLOOR)?;
        worst = worst.max(check.max_rel_error);
    }
    Ok(worst)
}

fn row(op: &str, tau: Option<f64>, instances: usize, err: f64, tolerance: f64) -> GateRow {
    GateRow {
        op: op.to_string(),
        tau,
        instances,
        max_rel_error: err,
        tolerance,
        passed: err <= tolerance,
    }
}

/// Runs every check with `instances` random draws each. Tolerances are
/// `1e-4`, relaxed to `1e-3` for the compound Sinkhorn checks at τ = 0.5.
pub fn run_gradient_gate(instances: usize, seed: u64) -> Result<Vec<GateRow>> {
    let mut rows = Vec::new();
    for (k, (name, shapes, build)) in primitives().into_iter().enumerate() {
        let err = check_primitive(&shapes, build, instances, rng::derive_seed(seed, k as u64))?;
        rows.push(row(name, None, instances, err, 1e-4));
    }
    let s = rng::derive_seed(seed, 100);
    rows.push(row("dense_relu", None, instances, check_dense(instances, s)?, 1e-4));
    for (tau, tol) in [(1.0, 1e-4), (0.5, 1e-3)] {
        let s = rng::derive_seed(seed, 200 + (tau * 10.0) as u64);
        rows.push(row("sinkhorn_vjp", Some(tau), instances, check_sinkhorn(tau, instances, s)?, tol));
        let s = rng::derive_seed(seed, 300 + (tau * 10.0) as u64);
        rows.push(row("sortnet_loss", Some(tau), instances, check_sortnet_loss(tau, instances, s)?, tol));
    }
    Ok(rows)
}
