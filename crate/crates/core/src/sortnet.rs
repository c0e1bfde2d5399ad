//! Permutation-equivariant number-sorting network.
//!
//! Every element of the input sequence goes through the same two dense
//! layers; element `i` produces row `i` of the logits matrix `g(x̃, θ)`.
//! Training reconstructs the sorted sequence as `S((g + ε)/τ)ᵀ x̃` and
//! minimizes the squared error to the sorted copy of the input. At test time
//! the soft operator is replaced by the exact matching `M(g)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::gumbel::sample_gumbel;
use crate::matching::hungarian;
use crate::matrix::{LogitsMatrix, Matrix};
use crate::metrics::{reconstruction_metrics, MetricsReport};
use crate::optim::{Adam, AdamConfig};
use crate::perm::Permutation;
use crate::rng;
use crate::sinkhorn::{sinkhorn, SinkhornConfig};

pub const DEFAULT_UNITS: usize = 32;

/// Shared per-element encoder (`w1`, `b1`) and row head (`w2`, `b2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortNetParams {
    /// `n_units × 1`
    pub w1: Matrix<f64>,
    /// `1 × n_units`
    pub b1: Matrix<f64>,
    /// `N × n_units`
    pub w2: Matrix<f64>,
    /// `1 × N`
    pub b2: Matrix<f64>,
}

impl SortNetParams {
    pub fn zeros(n: usize, n_units: usize) -> Self {
        Self {
            w1: Matrix::zeros(n_units, 1),
            b1: Matrix::zeros(1, n_units),
            w2: Matrix::zeros(n, n_units),
            b2: Matrix::zeros(1, n),
        }
    }

    /// Glorot-uniform weights and zero biases. With `b1 = 0` every hidden
    /// unit is homogeneous in a positive input, so the logits start out
    /// linear in `x` on `x > 0`.
    pub fn init<R: Rng + ?Sized>(n: usize, n_units: usize, rng: &mut R) -> Self {
        let enc = (6.0 / (1 + n_units) as f64).sqrt();
        let head = (6.0 / (n_units + n) as f64).sqrt();
        Self {
            w1: Matrix::from_fn(n_units, 1, |_, _| rng.gen_range(-enc..enc)),
            b1: Matrix::zeros(1, n_units),
            w2: Matrix::from_fn(n, n_units, |_, _| rng.gen_range(-head..head)),
            b2: Matrix::zeros(1, n),
        }
    }

    pub fn n(&self) -> usize {
        self.w2.rows()
    }

    pub fn n_units(&self) -> usize {
        self.w1.rows()
    }

    pub fn num_params(&self) -> usize {
        let u = self.n_units();
        2 * u + self.n() * u + self.n()
    }

    /// Checks that all four blocks agree on `N` and `n_units`.
    pub fn validate(&self) -> Result<()> {
        let (n, u) = (self.n(), self.n_units());
        if self.w1.cols() != 1 || self.b1.shape() != (1, u) || self.w2.cols() != u || self.b2.shape() != (1, n) {
            return Err(Error::Dimension(format!(
                "inconsistent shapes w1 {:?} b1 {:?} w2 {:?} b2 {:?}",
                self.w1.shape(),
                self.b1.shape(),
                self.w2.shape(),
                self.b2.shape()
            )));
        }
        Ok(())
    }

    /// `[w1, b1, w2, b2]` flattened row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for m in [&self.w1, &self.b1, &self.w2, &self.b2] {
            v.extend_from_slice(m.as_slice());
        }
        v
    }

    pub fn from_flat(n: usize, n_units: usize, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(n, n_units);
        if flat.len() != p.num_params() {
            return Err(Error::Dimension(format!(
                "{} values for {} parameters",
                flat.len(),
                p.num_params()
            )));
        }
        let mut offset = 0;
        for m in [&mut p.w1, &mut p.b1, &mut p.w2, &mut p.b2] {
            let len = m.as_slice().len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(p)
    }
}

fn check_sequence(x: &[f64], params: &SortNetParams) -> Result<()> {
    params.validate()?;
    if x.len() != params.n() {
        return Err(Error::Dimension(format!(
            "sequence of {} numbers for a network over N = {}",
            x.len(),
            params.n()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite input".into()));
    }
    Ok(())
}

/// `g(x̃, θ)`: row `i` is `W2 relu(W1 x̃ᵢ + b1) + b2`.
pub fn logits_from_sequence(x: &[f64], params: &SortNetParams) -> Result<LogitsMatrix<f64>> {
    check_sequence(x, params)?;
    let col = Matrix::column(x);
    let hidden = col.matmul_nt(&params.w1)?;
    let hidden = Matrix::from_fn(hidden.rows(), hidden.cols(), |i, k| {
        (hidden[(i, k)] + params.b1[(0, k)]).max(0.0)
    });
    let g = hidden.matmul_nt(&params.w2)?;
    LogitsMatrix::new(Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] + params.b2[(0, j)]))
}

/// Tape handles for the network parameters.
struct ParamVars {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

impl ParamVars {
    fn record(tape: &mut Tape<f64>, p: &SortNetParams) -> Self {
        Self {
            w1: tape.leaf(p.w1.clone()),
            b1: tape.leaf(p.b1.clone()),
            w2: tape.leaf(p.w2.clone()),
            b2: tape.leaf(p.b2.clone()),
        }
    }

    fn logits(&self, tape: &mut Tape<f64>, x: Var) -> Result<Var> {
        let h = tape.matmul_nt(x, self.w1)?;
        let h = tape.add_row_bias(h, self.b1)?;
        let h = tape.relu(h)?;
        let g = tape.matmul_nt(h, self.w2)?;
        tape.add_row_bias(g, self.b2)
    }

    fn flat_grad(&self, grads: &crate::autodiff::Gradients<f64>) -> Vec<f64> {
        let mut v = grads.wrt(self.w1).into_vec();
        v.extend(grads.wrt(self.b1).into_vec());
        v.extend(grads.wrt(self.w2).into_vec());
        v.extend(grads.wrt(self.b2).into_vec());
        v
    }
}

/// Soft reconstruction and its loss for one Gumbel draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftReconstruction {
    /// `S((g + noise_scale·ε)/τ)`
    pub soft_perm: Matrix<f64>,
    /// `Sᵀ x̃`
    pub reconstruction: Vec<f64>,
    /// Squared l2 distance from the sorted input.
    pub loss: f64,
}

/// `S((g(x̃) + noise_scale·ε)/τ)ᵀ x̃` with `ε` drawn from `seed`.
pub fn soft_reconstruct(
    x: &[f64],
    params: &SortNetParams,
    cfg: &SinkhornConfig,
    noise_scale: f64,
    seed: u64,
) -> Result<SoftReconstruction> {
    let g = logits_from_sequence(x, params)?;
    let noise = sample_gumbel::<f64>(x.len(), seed).entries.scale(noise_scale);
    let s = sinkhorn(&g.perturbed(&noise)?, cfg)?.into_matrix();
    let reconstruction = s.matmul_tn(&Matrix::column(x))?.into_vec();
    let sorted = sorted_copy(x);
    let loss = reconstruction
        .iter()
        .zip(&sorted)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(SoftReconstruction {
        soft_perm: s,
        reconstruction,
        loss,
    })
}

/// `M(g(x̃, θ))`
pub fn hard_sort(x: &[f64], params: &SortNetParams) -> Result<Permutation> {
    hungarian(&logits_from_sequence(x, params)?)
}

fn sorted_copy(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    s
}

/// Summed reconstruction loss of one example over several noise draws, with
/// its gradient with respect to the flattened parameters.
pub fn example_loss_and_grad(
    x: &[f64],
    params: &SortNetParams,
    cfg: &SinkhornConfig,
    noises: &[Matrix<f64>],
) -> Result<(f64, Vec<f64>)> {
    check_sequence(x, params)?;
    let mut tape = Tape::new();
    let vars = ParamVars::record(&mut tape, params);
    let xv = tape.constant(Matrix::column(x));
    let g = vars.logits(&mut tape, xv)?;
    let target = Matrix::column(&sorted_copy(x));
    let mut total: Option<Var> = None;
    for noise in noises {
        let e = tape.constant(noise.clone());
        let perturbed = tape.add(g, e)?;
        let s = tape.sinkhorn_scaled(perturbed, cfg)?;
        let recon = tape.matmul_tn(s, xv)?;
        let loss = tape.squared_error(recon, target.clone())?;
        total = Some(match total {
            Some(t) => tape.add(t, loss)?,
            None => loss,
        });
    }
    let Some(total) = total else {
        return Ok((0.0, vec![0.0; params.num_params()]));
    };
    let grads = tape.backward_scalar(total)?;
    Ok((tape.value(total)[(0, 0)], vars.flat_grad(&grads)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n: usize,
    pub n_units: usize,
    pub tau: f64,
    pub iterations: usize,
    pub noise_scale: f64,
    pub samples_per_example: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    pub train_low: f64,
    pub train_high: f64,
    pub test_low: f64,
    pub test_high: f64,
    pub test_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n: 5,
            n_units: DEFAULT_UNITS,
            tau: 1.0,
            iterations: 20,
            noise_scale: 1.0,
            samples_per_example: 10,
            batch_size: 10,
            learning_rate: 1e-3,
            steps: 10_000,
            seed: 0,
            train_low: 0.0,
            train_high: 1.0,
            test_low: 0.0,
            test_high: 1.0,
            test_size: 10_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n", self.n),
            ("n_units", self.n_units),
            ("iterations", self.iterations),
            ("samples_per_example", self.samples_per_example),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.train_low < self.train_high) || !(self.test_low < self.test_high) {
            return Err(Error::Config("interval bounds need low < high".into()));
        }
        if !(self.noise_scale >= 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::Config("noise_scale ≥ 0 and learning_rate > 0 required".into()));
        }
        self.sinkhorn().validate()
    }

    pub fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig::new(self.tau, self.iterations)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean per-reconstruction loss at each step.
    pub losses: Vec<f64>,
}

// stream tags keep init, data and noise draws independent
const INIT_STREAM: u64 = 0;
const DATA_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const TEST_STREAM: u64 = 3;

fn uniform_sequence<R: Rng + ?Sized>(n: usize, low: f64, high: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(low..high)).collect()
}

/// Trains on a fresh stream of `U(train_low, train_high)` sequences.
pub fn train_sort(cfg: &TrainConfig) -> Result<(SortNetParams, TrainLog)> {
    cfg.validate()?;
    let sk = cfg.sinkhorn();
    let mut params = SortNetParams::init(cfg.n, cfg.n_units, &mut rng::stream(cfg.seed, INIT_STREAM));
    let mut flat = params.to_flat();
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        flat.len(),
    );
    let mut data_rng = rng::stream(cfg.seed, DATA_STREAM);
    let noise_seed = rng::derive_seed(cfg.seed, NOISE_STREAM);
    let per_step = (cfg.batch_size * cfg.samples_per_example) as f64;
    let mut log = TrainLog::default();

    for step in 0..cfg.steps {
        let mut grad = vec![0.0; flat.len()];
        let mut loss = 0.0;
        for b in 0..cfg.batch_size {
            let x = uniform_sequence(cfg.n, cfg.train_low, cfg.train_high, &mut data_rng);
            let noises: Vec<Matrix<f64>> = (0..cfg.samples_per_example)
                .map(|s| {
                    let draw = ((step * cfg.batch_size + b) * cfg.samples_per_example + s) as u64;
                    sample_gumbel::<f64>(cfg.n, rng::derive_seed(noise_seed, draw))
                        .entries
                        .scale(cfg.noise_scale)
                })
                .collect();
            let (l, g) = example_loss_and_grad(&x, &params, &sk, &noises)?;
            loss += l;
            for (acc, v) in grad.iter_mut().zip(&g) {
                *acc += v;
            }
        }
        loss /= per_step;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training {
                step,
                reason: format!("loss {loss}"),
            });
        }
        grad.iter_mut().for_each(|g| *g /= per_step);
        adam.step(&mut flat, &grad);
        params = SortNetParams::from_flat(cfg.n, cfg.n_units, &flat)?;
        log.losses.push(loss);
    }
    Ok((params, log))
}

/// Mean metrics of `hard_sort` over `count` fresh `U(low, high)` sequences.
///
/// Items are evaluated in parallel but averaged in index order, so the
/// result does not depend on the thread count.
pub fn evaluate_sort(params: &SortNetParams, low: f64, high: f64, count: usize, seed: u64) -> Result<MetricsReport> {
    params.validate()?;
    if !(low < high) {
        return Err(Error::Config("interval bounds need low < high".into()));
    }
    let n = params.n();
    let reports: Result<Vec<MetricsReport>> = (0..count)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(rng::derive_seed(seed, TEST_STREAM), k as u64);
            let x = uniform_sequence(n, low, high, &mut r);
            let truth_perm = Permutation::sorting(&x);
            let predicted = hard_sort(&x, params)?;
            let truth: Vec<Vec<f64>> = sorted_copy(&x).into_iter().map(|v| vec![v]).collect();
            let scrambled: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
            reconstruction_metrics(&truth, &predicted, &scrambled, &truth_perm)
        })
        .collect();
    Ok(MetricsReport::mean(&reports?))
}

/// One cell of the sorting results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub test_dist_low: f64,
    pub test_dist_high: f64,
    pub n: usize,
    pub metrics: MetricsReport,
}

pub const TABLE1_HEADER: &str = "test_dist_low,test_dist_high,N,prop_any_wrong,prop_wrong,kendall_tau,l1,l2";

impl Table1Row {
    pub fn csv_line(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.test_dist_low, self.test_dist_high, self.n, m.prop_any_wrong, m.prop_wrong, m.kendall_tau, m.l1, m.l2
        )
    }
}

pub fn table1_csv(rows: &[Table1Row]) -> String {
    let mut out = String::from(TABLE1_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Rows of the sorting table with the models and loss traces behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct Table1Result {
    /// Grouped by test interval, `N` in the given order within a group.
    pub rows: Vec<Table1Row>,
    /// One per `N`, in the given order.
    pub models: Vec<SortNetParams>,
    pub logs: Vec<TrainLog>,
}

/// Trains one model per `N` with `base` (overriding `n`) and evaluates it on
/// every test interval. Models train concurrently, each single-threaded.
pub fn table1(base: &TrainConfig, ns: &[usize], test_dists: &[(f64, f64)]) -> Result<Table1Result> {
    let trained: Result<Vec<(SortNetParams, TrainLog, Vec<Table1Row>)>> = ns
        .par_iter()
        .map(|&n| {
            let cfg = TrainConfig { n, ..base.clone() };
            let (params, log) = train_sort(&cfg)?;
            let rows = test_dists
                .iter()
                .map(|&(low, high)| {
                    Ok(Table1Row {
                        test_dist_low: low,
                        test_dist_high: high,
                        n,
                        metrics: evaluate_sort(&params, low, high, cfg.test_size, cfg.seed)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((params, log, rows))
        })
        .collect();
    let trained = trained?;
    let mut rows = Vec::new();
    for d in 0..test_dists.len() {
        for (_, _, per_n) in &trained {
            rows.push(per_n[d].clone());
        }
    }
    let (models, logs) = trained.into_iter().map(|(p, l, _)| (p, l)).unzip();
    Ok(Table1Result { rows, models, logs })
}
