//! Matrix-valued reverse-mode tape.
//!
//! Each node stores its forward value; the few operations whose backward
//! rule needs more (the log-space normalizations) cache it alongside. The
//! backward pass reads cached values only and never writes to them.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::sinkhorn::{log_normalize_cols_weighted, log_normalize_rows_weighted, SinkhornConfig};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Op<T: Scalar> {
    /// Differentiable input.
    Leaf,
    /// Input that receives no gradient.
    Constant,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    /// `aᵀ · b`
    MatMulTn(Var, Var),
    Add(Var, Var),
    /// `a + 1·bias` with `bias` a `1×c` row broadcast over rows.
    AddRowBias(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Exp(Var),
    /// `x − lse(row)`; the cached matrix is the row softmax `exp(output)`.
    LogNormRows(Var, Matrix<T>),
    /// `x − lse(col)`; the cached matrix is the column softmax.
    LogNormCols(Var, Matrix<T>),
    /// Fused `S^L(a·inv_tau)` in scaling form: `(input, inv_tau, iterations,
    /// final_row_pass, cache)`.
    SinkhornScaling(Var, T, usize, bool, Box<ScalingCache<T>>),
    /// `Σ (a − target)²` as a `1×1` matrix.
    SquaredError(Var, Matrix<T>),
    /// `Σ a` as a `1×1` matrix.
    Sum(Var),
}

impl<T: Scalar> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::MatMulTn(..) => "matmul_tn",
            Op::Add(..) => "add",
            Op::AddRowBias(..) => "add_row_bias",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::Exp(..) => "exp",
            Op::LogNormRows(..) => "log_norm_rows",
            Op::LogNormCols(..) => "log_norm_cols",
            Op::SinkhornScaling(..) => "sinkhorn_scaling",
            Op::SquaredError(..) => "squared_error",
            Op::Sum(..) => "sum",
        }
    }
}

/// Kernel and per-round scaling vectors of a fused Sinkhorn node.
/// `vs[0]` is the all-ones start; `us[l]` pairs with `vs[l]` for the
/// output unless a final row pass appended one more `u`.
#[derive(Debug, Clone, PartialEq)]
struct ScalingCache<T: Scalar> {
    k: Matrix<T>,
    us: Vec<Vec<T>>,
    vs: Vec<Vec<T>>,
}

/// Largest spread of `x/τ` the scaling form accepts before deferring to
/// log space. Keeps every kernel entry and scaling factor far from
/// underflow and overflow.
const SCALING_MAX_SPREAD: f64 = 250.0;

fn reciprocal_matvec<T: Scalar>(k: &Matrix<T>, v: &[T]) -> Option<Vec<T>> {
    let mut out = Vec::with_capacity(k.rows());
    for i in 0..k.rows() {
        let dot: T = k.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum();
        let r = T::one() / dot;
        if !(r.is_finite() && r > T::zero()) {
            return None;
        }
        out.push(r);
    }
    Some(out)
}

fn reciprocal_matvec_t<T: Scalar>(k: &Matrix<T>, u: &[T]) -> Option<Vec<T>> {
    let mut acc = vec![T::zero(); k.cols()];
    for (i, &ui) in u.iter().enumerate() {
        for (a, &kv) in acc.iter_mut().zip(k.row(i)) {
            *a = *a + kv * ui;
        }
    }
    for a in acc.iter_mut() {
        *a = T::one() / *a;
        if !(a.is_finite() && *a > T::zero()) {
            return None;
        }
    }
    Some(acc)
}

/// Forward pass of the fused node, or `None` when log space is needed.
fn scaling_forward<T: Scalar>(
    x: &Matrix<T>,
    inv_tau: T,
    iterations: usize,
    final_row_pass: bool,
) -> Option<(Matrix<T>, ScalingCache<T>)> {
    let scaled = x.scale(inv_tau);
    let hi = scaled.as_slice().iter().copied().fold(T::neg_infinity(), T::max);
    let lo = scaled.as_slice().iter().copied().fold(T::infinity(), T::min);
    if !(hi - lo <= T::of(SCALING_MAX_SPREAD)) {
        return None;
    }
    // the row shift is absorbed by the first row normalization
    let mut k = scaled;
    for i in 0..k.rows() {
        let m = k.row(i).iter().copied().fold(T::neg_infinity(), T::max);
        k.row_mut(i).iter_mut().for_each(|v| *v = (*v - m).exp());
    }
    let mut us = Vec::with_capacity(iterations + 1);
    let mut vs = Vec::with_capacity(iterations + 1);
    vs.push(vec![T::one(); k.cols()]);
    for _ in 0..iterations {
        let u = reciprocal_matvec(&k, vs.last().expect("start vector"))?;
        let v = reciprocal_matvec_t(&k, &u)?;
        us.push(u);
        vs.push(v);
    }
    if final_row_pass {
        us.push(reciprocal_matvec(&k, vs.last().expect("start vector"))?);
    }
    let (u, v) = (us.last()?, vs.last().expect("start vector"));
    let s = Matrix::from_fn(k.rows(), k.cols(), |i, j| u[i] * k[(i, j)] * v[j]);
    Some((s, ScalingCache { k, us, vs }))
}

/// Reverse pass of the fused node: gradient with respect to its input.
fn scaling_backward<T: Scalar>(c: &ScalingCache<T>, g: &Matrix<T>, inv_tau: T, final_row_pass: bool) -> Matrix<T> {
    let k = &c.k;
    let (rows, cols) = k.shape();
    let u = c.us.last().expect("at least one round");
    let v = c.vs.last().expect("start vector");
    let mut k_bar = Matrix::from_fn(rows, cols, |i, j| g[(i, j)] * u[i] * v[j]);
    let mut u_bar: Vec<T> = (0..rows)
        .map(|i| (0..cols).map(|j| g[(i, j)] * k[(i, j)] * v[j]).sum())
        .collect();
    let mut v_bar = vec![T::zero(); cols];
    for i in 0..rows {
        for j in 0..cols {
            v_bar[j] = v_bar[j] + g[(i, j)] * k[(i, j)] * u[i];
        }
    }
    // u = 1/(K v): pushes the adjoint of u back into K and v
    let row_step = |u: &[T], v_prev: &[T], u_bar: &[T], k_bar: &mut Matrix<T>, v_bar_prev: &mut [T]| {
        for i in 0..rows {
            let a = T::zero() - u_bar[i] * u[i] * u[i];
            for j in 0..cols {
                k_bar[(i, j)] = k_bar[(i, j)] + a * v_prev[j];
                v_bar_prev[j] = v_bar_prev[j] + k[(i, j)] * a;
            }
        }
    };
    let mut rounds = c.us.len();
    if final_row_pass {
        rounds -= 1;
        let mut v_prev_bar = v_bar.clone();
        row_step(&c.us[rounds], &c.vs[rounds], &u_bar, &mut k_bar, &mut v_prev_bar);
        v_bar = v_prev_bar;
        u_bar = vec![T::zero(); rows];
    }
    for l in (0..rounds).rev() {
        let (u, v) = (&c.us[l], &c.vs[l + 1]);
        // v = 1/(Kᵀ u)
        for j in 0..cols {
            let b = T::zero() - v_bar[j] * v[j] * v[j];
            for i in 0..rows {
                k_bar[(i, j)] = k_bar[(i, j)] + u[i] * b;
                u_bar[i] = u_bar[i] + k[(i, j)] * b;
            }
        }
        let mut v_prev_bar = vec![T::zero(); cols];
        row_step(u, &c.vs[l], &u_bar, &mut k_bar, &mut v_prev_bar);
        v_bar = v_prev_bar;
        u_bar = vec![T::zero(); rows];
    }
    Matrix::from_fn(rows, cols, |i, j| k_bar[(i, j)] * k[(i, j)] * inv_tau)
}

#[derive(Debug, Clone, PartialEq)]
struct Node<T: Scalar> {
    op: Op<T>,
    value: Matrix<T>,
}

#[derive(Debug, Clone, Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Matrix<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`; zeros when `v` does not reach the output.
    pub fn wrt(&self, v: Var) -> Matrix<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    /// Names of the recorded operations, in order.
    pub fn ops(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    fn push(&mut self, op: Op<T>, value: Matrix<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op<T>) -> Result<Var> {
        let (value, op) = self.evaluate(op)?;
        Ok(self.push(op, value))
    }

    pub fn leaf(&mut self, value: Matrix<T>) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMulNt(a, b))
    }

    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMulTn(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }

    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        self.record(Op::AddRowBias(a, bias))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        self.record(Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Exp(a))
    }

    pub fn log_norm_rows(&mut self, a: Var) -> Result<Var> {
        self.record(Op::LogNormRows(a, Matrix::zeros(0, 0)))
    }

    pub fn log_norm_cols(&mut self, a: Var) -> Result<Var> {
        self.record(Op::LogNormCols(a, Matrix::zeros(0, 0)))
    }

    pub fn squared_error(&mut self, a: Var, target: Matrix<T>) -> Result<Var> {
        self.record(Op::SquaredError(a, target))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sum(a))
    }

    /// Records `S^L(x/τ)`: scale, `L` row/column log-normalization rounds,
    /// then `exp`. Returns the log-domain and the probability-domain nodes.
    pub fn sinkhorn(&mut self, x: Var, cfg: &SinkhornConfig) -> Result<(Var, Var)> {
        cfg.validate()?;
        let mut log_s = self.scale(x, T::one() / T::of(cfg.tau))?;
        for _ in 0..cfg.iterations {
            log_s = self.log_norm_rows(log_s)?;
            log_s = self.log_norm_cols(log_s)?;
        }
        if cfg.final_row_pass {
            log_s = self.log_norm_rows(log_s)?;
        }
        let s = self.exp(log_s)?;
        Ok((log_s, s))
    }

    /// `S^L(x/τ)` as one node in scaling form, which needs a single `exp`
    /// per entry rather than one per entry and round. Falls back to
    /// [`Tape::sinkhorn`] when `x/τ` spans too wide a range. Agrees with the
    /// log-space operator up to rounding.
    pub fn sinkhorn_scaled(&mut self, x: Var, cfg: &SinkhornConfig) -> Result<Var> {
        cfg.validate()?;
        let inv_tau = T::one() / T::of(cfg.tau);
        match scaling_forward(self.value(x), inv_tau, cfg.iterations, cfg.final_row_pass) {
            Some((s, cache)) => Ok(self.push(
                Op::SinkhornScaling(x, inv_tau, cfg.iterations, cfg.final_row_pass, Box::new(cache)),
                s,
            )),
            None => Ok(self.sinkhorn(x, cfg)?.1),
        }
    }

    /// Forward rule shared by recording and replay. Returns the value and
    /// the op with any cache filled in.
    fn evaluate(&self, op: Op<T>) -> Result<(Matrix<T>, Op<T>)> {
        let val = |v: &Var| &self.nodes[v.0].value;
        let value = match &op {
            Op::Leaf | Op::Constant => {
                return Err(Error::Tape("inputs are not evaluated".into()));
            }
            Op::MatMul(a, b) => val(a).matmul(val(b))?,
            Op::MatMulNt(a, b) => val(a).matmul_nt(val(b))?,
            Op::MatMulTn(a, b) => val(a).matmul_tn(val(b))?,
            Op::Add(a, b) => val(a).add(val(b))?,
            Op::AddRowBias(a, b) => {
                let (a, b) = (val(a), val(b));
                if b.rows() != 1 || b.cols() != a.cols() {
                    return Err(Error::Dimension(format!(
                        "bias {:?} for input {:?}",
                        b.shape(),
                        a.shape()
                    )));
                }
                Matrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] + b[(0, j)])
            }
            Op::Scale(a, s) => val(a).scale(*s),
            Op::Relu(a) => val(a).map(|v| v.max(T::zero())),
            Op::Exp(a) => val(a).map(T::exp),
            Op::LogNormRows(a, _) => {
                let mut out = val(a).clone();
                let weights = log_normalize_rows_weighted(&mut out);
                return Ok((out, Op::LogNormRows(*a, weights)));
            }
            Op::LogNormCols(a, _) => {
                let mut out = val(a).clone();
                let weights = log_normalize_cols_weighted(&mut out);
                return Ok((out, Op::LogNormCols(*a, weights)));
            }
            Op::SinkhornScaling(a, inv_tau, iterations, final_row, _) => {
                let (s, cache) = scaling_forward(val(a), *inv_tau, *iterations, *final_row)
                    .ok_or_else(|| Error::Tape("scaling form no longer applicable".into()))?;
                let op = Op::SinkhornScaling(*a, *inv_tau, *iterations, *final_row, Box::new(cache));
                return Ok((s, op));
            }
            Op::SquaredError(a, target) => {
                let d = val(a).sub(target)?;
                Matrix::filled(1, 1, d.as_slice().iter().map(|&v| v * v).sum())
            }
            Op::Sum(a) => Matrix::filled(1, 1, val(a).sum()),
        };
        Ok((value, op))
    }

    /// Recomputes every derived node from the recorded inputs. The result
    /// matches the recorded values bit for bit.
    pub fn replay(&self) -> Result<Vec<Matrix<T>>> {
        let mut fresh = Tape { nodes: Vec::with_capacity(self.nodes.len()) };
        for node in &self.nodes {
            match node.op {
                Op::Leaf | Op::Constant => fresh.nodes.push(node.clone()),
                _ => {
                    let (value, op) = fresh.evaluate(node.op.clone())?;
                    fresh.push(op, value);
                }
            }
        }
        Ok(fresh.nodes.into_iter().map(|n| n.value).collect())
    }

    /// Reverse pass from `output` seeded with `upstream` (same shape).
    pub fn backward(&self, output: Var, upstream: &Matrix<T>) -> Result<Gradients<T>> {
        let out_shape = self.nodes[output.0].value.shape();
        if upstream.shape() != out_shape {
            return Err(Error::Dimension(format!(
                "upstream {:?} for output {:?}",
                upstream.shape(),
                out_shape
            )));
        }
        let mut grads: Vec<Option<Matrix<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(upstream.clone());

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let val = |v: &Var| &self.nodes[v.0].value;
            let mut contributions: Vec<(Var, Matrix<T>)> = Vec::with_capacity(2);
            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::MatMul(a, b) => {
                    contributions.push((*a, g.matmul_nt(val(b))?));
                    contributions.push((*b, val(a).matmul_tn(&g)?));
                }
                Op::MatMulNt(a, b) => {
                    // y = a bᵀ: da = g b, db = gᵀ a
                    contributions.push((*a, g.matmul(val(b))?));
                    contributions.push((*b, g.matmul_tn(val(a))?));
                }
                Op::MatMulTn(a, b) => {
                    // y = aᵀ b: da = b gᵀ, db = a g
                    contributions.push((*a, val(b).matmul_nt(&g)?));
                    contributions.push((*b, val(a).matmul(&g)?));
                }
                Op::Add(a, b) => {
                    contributions.push((*a, g.clone()));
                    contributions.push((*b, g.clone()));
                }
                Op::AddRowBias(a, b) => {
                    let db = Matrix::from_vec(1, g.cols(), g.col_sums())?;
                    contributions.push((*a, g.clone()));
                    contributions.push((*b, db));
                }
                Op::Scale(a, s) => contributions.push((*a, g.scale(*s))),
                Op::Relu(a) => {
                    // subgradient 0 at 0
                    let d = g.zip_map(val(a), |gv, x| if x > T::zero() { gv } else { T::zero() })?;
                    contributions.push((*a, d));
                }
                Op::Exp(a) => contributions.push((*a, g.zip_map(&node.value, |gv, y| gv * y)?)),
                Op::LogNormRows(a, w) => {
                    let mut d = g.clone();
                    for i in 0..d.rows() {
                        let total: T = g.row(i).iter().copied().sum();
                        for (dv, &wv) in d.row_mut(i).iter_mut().zip(w.row(i)) {
                            *dv = *dv - wv * total;
                        }
                    }
                    contributions.push((*a, d));
                }
                Op::LogNormCols(a, w) => {
                    let totals = g.col_sums();
                    let mut d = g.clone();
                    for i in 0..d.rows() {
                        for ((dv, &wv), &t) in d.row_mut(i).iter_mut().zip(w.row(i)).zip(&totals) {
                            *dv = *dv - wv * t;
                        }
                    }
                    contributions.push((*a, d));
                }
                Op::SinkhornScaling(a, inv_tau, _, final_row, cache) => {
                    contributions.push((*a, scaling_backward(cache, &g, *inv_tau, *final_row)));
                }
                Op::SquaredError(a, target) => {
                    let two_g = g[(0, 0)] + g[(0, 0)];
                    contributions.push((*a, val(a).zip_map(target, |x, t| two_g * (x - t))?));
                }
                Op::Sum(a) => {
                    let (r, c) = val(a).shape();
                    contributions.push((*a, Matrix::filled(r, c, g[(0, 0)])));
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
            for (v, d) in contributions {
                if matches!(self.nodes[v.0].op, Op::Constant) {
                    continue;
                }
                grads[v.0] = Some(match grads[v.0].take() {
                    Some(acc) => acc.add(&d)?,
                    None => d,
                });
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    /// Backward pass from a `1×1` output with seed 1.
    pub fn backward_scalar(&self, output: Var) -> Result<Gradients<T>> {
        self.backward(output, &Matrix::filled(1, 1, T::one()))
    }
}
