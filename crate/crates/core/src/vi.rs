//! Variational inference over a latent matching.
//!
//! A template of `N` items in `D` dimensions is observed after an unknown
//! permutation and Gaussian noise. The posterior over the permutation is a
//! Gumbel-Sinkhorn distribution with logits `X`, fitted by stochastic
//! gradient ascent on a reparameterized ELBO whose KL term is taken between
//! Gumbel codes.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::gumbel::{kl_gumbel_space, kl_gumbel_space_grad, sample_gumbel, KlParams};
use crate::matching::hungarian;
use crate::matrix::{LogitsMatrix, Matrix};
use crate::optim::{Adam, AdamConfig};
use crate::perm::Permutation;
use crate::rng;
use crate::sinkhorn::SinkhornConfig;

const TEMPLATE_STREAM: u64 = 0;
const PERM_STREAM: u64 = 1;
const OBS_NOISE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMatchTask {
    /// `N×D` canonical items, i.i.d. standard normal.
    pub template: Matrix<f64>,
    /// `P*ᵀ · template + σ·noise`
    pub observed: Matrix<f64>,
    pub true_perm: Permutation,
    pub sigma: f64,
    pub seed: u64,
}

impl SyntheticMatchTask {
    pub fn generate(n: usize, d: usize, sigma: f64, seed: u64) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Config(format!("task needs n, d > 0, got {n}, {d}")));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be finite and ≥ 0, got {sigma}")));
        }
        let mut r = rng::stream(seed, TEMPLATE_STREAM);
        let template = Matrix::from_fn(n, d, |_, _| r.sample(StandardNormal));
        let true_perm = Permutation::random(n, &mut rng::stream(seed, PERM_STREAM));
        let mut noise = rng::stream(seed, OBS_NOISE_STREAM);
        let clean = true_perm.to_matrix::<f64>().matmul_tn(&template)?;
        let shifts: Vec<f64> = (0..n * d).map(|_| noise.sample::<f64, _>(StandardNormal)).collect();
        let observed = Matrix::from_fn(n, d, |i, j| clean[(i, j)] + sigma * shifts[i * d + j]);
        Ok(Self {
            template,
            observed,
            true_perm,
            sigma,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.template.rows()
    }

    /// Fraction of items that `guess` sends to their true slot.
    pub fn accuracy(&self, guess: &Permutation) -> Result<f64> {
        Ok(1.0 - self.true_perm.hamming(guess)? as f64 / self.n() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub x: LogitsMatrix<f64>,
    pub tau: f64,
    pub tau_prior: f64,
    pub mc_samples: usize,
    /// Sinkhorn rounds per sample.
    pub iterations: usize,
}

impl VariationalState {
    /// Zero logits with `τ_prior = τ`.
    pub fn new(n: usize, tau: f64) -> Self {
        Self {
            x: LogitsMatrix::zeros(n),
            tau,
            tau_prior: tau,
            mc_samples: 1,
            iterations: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau_prior > 0.0) {
            return Err(Error::Config(format!(
                "temperatures must be positive, got tau={} tau_prior={}",
                self.tau, self.tau_prior
            )));
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("mc_samples must be at least 1".into()));
        }
        self.sinkhorn().validate()
    }

    fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig::new(self.tau, self.iterations)
    }

    fn kl_params(&self) -> KlParams<f64> {
        KlParams {
            x: self.x.clone(),
            tau: self.tau,
            tau_prior: self.tau_prior,
        }
    }
}

fn check_pair(state: &VariationalState, task: &SyntheticMatchTask) -> Result<()> {
    state.validate()?;
    if state.x.n() != task.n() {
        return Err(Error::Dimension(format!(
            "posterior over {} items for a task with {}",
            state.x.n(),
            task.n()
        )));
    }
    if !(task.sigma > 0.0) {
        return Err(Error::Domain("the Gaussian likelihood needs sigma > 0".into()));
    }
    Ok(())
}

/// Surrogate ELBO and its gradient with respect to `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboEstimate {
    pub elbo: f64,
    pub log_likelihood: f64,
    pub kl: f64,
    pub grad: Matrix<f64>,
}

/// Monte Carlo ELBO: mean log-likelihood of `observed` under
/// `N(Sᵀ·template, σ²)` for `S = S((X + ε)/τ)`, minus the Gumbel-space KL.
/// Sample `s` uses noise seed `derive_seed(seed, s)`.
pub fn elbo_and_grad(state: &VariationalState, task: &SyntheticMatchTask, seed: u64) -> Result<ElboEstimate> {
    check_pair(state, task)?;
    let n = task.n();
    let cfg = state.sinkhorn();
    let mut tape = Tape::new();
    let xv = tape.leaf(state.x.matrix().clone());
    let template = tape.constant(task.template.clone());
    let mut total = None;
    for s in 0..state.mc_samples {
        let eps = sample_gumbel::<f64>(n, rng::derive_seed(seed, s as u64)).entries;
        let e = tape.constant(eps);
        let perturbed = tape.add(xv, e)?;
        let soft = tape.sinkhorn_scaled(perturbed, &cfg)?;
        let predicted = tape.matmul_tn(soft, template)?;
        let se = tape.squared_error(predicted, task.observed.clone())?;
        total = Some(match total {
            Some(t) => tape.add(t, se)?,
            None => se,
        });
    }
    let total = total.expect("mc_samples ≥ 1");
    let m = state.mc_samples as f64;
    let var2 = 2.0 * task.sigma * task.sigma;
    let count = task.observed.as_slice().len() as f64;
    let log_likelihood = -0.5 * count * (std::f64::consts::PI * var2).ln() - tape.value(total)[(0, 0)] / (var2 * m);
    let kl = kl_gumbel_space(&state.kl_params())?;
    let se_grad = tape.backward_scalar(total)?.wrt(xv);
    let kl_grad = kl_gumbel_space_grad(&state.kl_params())?;
    let grad = se_grad.scale(-1.0 / (var2 * m)).sub(&kl_grad)?;
    Ok(ElboEstimate {
        elbo: log_likelihood - kl,
        log_likelihood,
        kl,
        grad,
    })
}

pub fn surrogate_elbo(state: &VariationalState, task: &SyntheticMatchTask, seed: u64) -> Result<f64> {
    Ok(elbo_and_grad(state, task, seed)?.elbo)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Drop the KL term from the optimized objective.
    pub use_kl: bool,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            learning_rate: 0.05,
            use_kl: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub state: VariationalState,
    pub accuracy: f64,
    /// Full surrogate ELBO (KL included) at each step, before the update.
    pub elbo_trace: Vec<f64>,
}

/// Adam ascent on the surrogate ELBO over `X`; temperatures stay fixed.
/// Accuracy scores `M(X)` against the true permutation.
pub fn fit_posterior(task: &SyntheticMatchTask, init: &VariationalState, cfg: &FitConfig) -> Result<FitResult> {
    check_pair(init, task)?;
    let n = task.n();
    let mut state = init.clone();
    let mut flat = state.x.matrix().as_slice().to_vec();
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        flat.len(),
    );
    let mut elbo_trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let est = elbo_and_grad(&state, task, rng::derive_seed(cfg.seed, step as u64))?;
        let mut grad = est.grad;
        if !cfg.use_kl {
            grad = grad.add(&kl_gumbel_space_grad(&state.kl_params())?)?;
        }
        if !est.elbo.is_finite() || !grad.all_finite() {
            return Err(Error::Training {
                step,
                reason: format!("elbo {}", est.elbo),
            });
        }
        elbo_trace.push(est.elbo);
        // ascent: Adam descends on the negated gradient
        let neg: Vec<f64> = grad.as_slice().iter().map(|g| -g).collect();
        adam.step(&mut flat, &neg);
        state.x = LogitsMatrix::new(Matrix::from_vec(n, n, flat.clone())?)?;
    }
    let accuracy = task.accuracy(&hungarian(&state.x)?)?;
    Ok(FitResult {
        state,
        accuracy,
        elbo_trace,
    })
}

/// Log target of the sampler. At σ = 0 it scores exact item matches instead.
fn log_target(task: &SyntheticMatchTask, p: &Permutation) -> Result<f64> {
    let predicted = p.to_matrix::<f64>().matmul_tn(&task.template)?;
    if task.sigma > 0.0 {
        let se: f64 = predicted
            .as_slice()
            .iter()
            .zip(task.observed.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(-se / (2.0 * task.sigma * task.sigma))
    } else {
        let matches = (0..task.n())
            .filter(|&i| predicted.row(i) == task.observed.row(i))
            .count();
        Ok(EXACT_MATCH_WEIGHT * matches as f64)
    }
}

/// Log-odds gained per exactly matched slot in the noiseless sampler.
pub const EXACT_MATCH_WEIGHT: f64 = 5.0;

/// Metropolis over permutations with random-transposition proposals,
/// starting from the identity. A sweep is `N` proposals. Returns the
/// accuracy of the most visited slot of each item; ties go to the lowest
/// slot.
pub fn mcmc_baseline(task: &SyntheticMatchTask, sweeps: usize, seed: u64) -> Result<f64> {
    let n = task.n();
    let mut r = rng::stream(seed, 0);
    let mut current = Permutation::identity(n);
    let mut current_lp = log_target(task, &current)?;
    let mut visits = vec![vec![0u64; n]; n];
    let mut record = |p: &Permutation| {
        for (i, &j) in p.mapping().iter().enumerate() {
            visits[i][j] += 1;
        }
    };
    record(&current);
    for _ in 0..sweeps {
        for _ in 0..n {
            if n > 1 {
                let a = r.gen_range(0..n);
                let b = (a + r.gen_range(1..n)) % n;
                let mut mapping = current.mapping().to_vec();
                mapping.swap(a, b);
                let proposal = Permutation::new(mapping)?;
                let lp = log_target(task, &proposal)?;
                if lp >= current_lp || rng::open_uniform(&mut r).ln() < lp - current_lp {
                    current = proposal;
                    current_lp = lp;
                }
            }
            record(&current);
        }
    }
    let hits = (0..n)
        .filter(|&i| {
            let best = (0..n).fold(0, |b, j| if visits[i][j] > visits[i][b] { j } else { b });
            best == task.true_perm.mapping()[i]
        })
        .count();
    Ok(hits as f64 / n as f64)
}

/// A batch of independent synthetic tasks fitted with shared settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViExperiment {
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub tau: f64,
    pub tau_prior: f64,
    pub iterations: usize,
    pub mc_samples: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seeds: usize,
    pub use_kl: bool,
    pub seed: u64,
}

impl Default for ViExperiment {
    fn default() -> Self {
        let fit = FitConfig::default();
        Self {
            n: 8,
            d: 10,
            sigma: 0.05,
            tau: 1.0,
            tau_prior: 1.0,
            iterations: 20,
            mc_samples: 1,
            steps: fit.steps,
            learning_rate: fit.learning_rate,
            seeds: 20,
            use_kl: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedOutcome {
    pub task_seed: u64,
    pub accuracy: f64,
    pub elbo_trace: Vec<f64>,
    #[serde(skip)]
    pub x: Matrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViReport {
    pub schema_version: u32,
    pub experiment: ViExperiment,
    pub mean_accuracy: f64,
    pub outcomes: Vec<SeedOutcome>,
}

/// Task `k` is generated from `derive_seed(seed, k)` and fitted with noise
/// from the next seed in that family, so runs with and without the KL term
/// see the same tasks and the same Gumbel draws.
pub fn run_vi_experiment(exp: &ViExperiment) -> Result<ViReport> {
    use rayon::prelude::*;
    let outcomes: Result<Vec<SeedOutcome>> = (0..exp.seeds)
        .into_par_iter()
        .map(|k| {
            let task_seed = rng::derive_seed(exp.seed, 2 * k as u64);
            let task = SyntheticMatchTask::generate(exp.n, exp.d, exp.sigma, task_seed)?;
            let init = VariationalState {
                x: LogitsMatrix::zeros(exp.n),
                tau: exp.tau,
                tau_prior: exp.tau_prior,
                mc_samples: exp.mc_samples,
                iterations: exp.iterations,
            };
            let cfg = FitConfig {
                steps: exp.steps,
                learning_rate: exp.learning_rate,
                use_kl: exp.use_kl,
                seed: rng::derive_seed(exp.seed, 2 * k as u64 + 1),
            };
            let fit = fit_posterior(&task, &init, &cfg)?;
            Ok(SeedOutcome {
                task_seed,
                accuracy: fit.accuracy,
                elbo_trace: fit.elbo_trace,
                x: fit.state.x.into_matrix(),
            })
        })
        .collect();
    let outcomes = outcomes?;
    let mean_accuracy = if outcomes.is_empty() {
        0.0
    } else {
        outcomes.iter().map(|o| o.accuracy).sum::<f64>() / outcomes.len() as f64
    };
    Ok(ViReport {
        schema_version: crate::io::SCHEMA_VERSION,
        experiment: exp.clone(),
        mean_accuracy,
        outcomes,
    })
}
