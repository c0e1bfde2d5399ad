use permlearn::gumbel::{discrete_kl, kl_data_processing_check, sample_gumbel_matching};
use permlearn::matching::{brute_force_match, hungarian};
use permlearn::sinkhorn::{entropy_reg_objective, sinkhorn};
use permlearn::sortnet::{evaluate_sort, hard_sort, train_sort, SortNetParams, TrainConfig};
use permlearn::{rng, DoublyStochasticMatrix, LogitsMatrix, Matrix, Permutation, SinkhornConfig};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn normal_logits(n: usize, seed: u64) -> LogitsMatrix<f64> {
    let mut r = rng::stream(seed, 0);
    LogitsMatrix::new(Matrix::from_fn(n, n, |_, _| r.sample(StandardNormal))).unwrap()
}

/// Random convex combination of `k` random permutation matrices.
fn random_ds(n: usize, k: usize, r: &mut impl Rng) -> DoublyStochasticMatrix<f64> {
    let weights: Vec<f64> = (0..k).map(|_| r.gen::<f64>() + 1e-3).collect();
    let total: f64 = weights.iter().sum();
    let mut m = Matrix::zeros(n, n);
    for w in weights {
        m = m.add(&Permutation::random(n, r).to_matrix::<f64>().scale(w / total)).unwrap();
    }
    DoublyStochasticMatrix::new(m, 1e-9).unwrap()
}

#[test]
fn cooling_approaches_the_matching() {
    let mut closer = 0;
    for seed in 0..20 {
        let x = normal_logits(5, seed);
        let m = hungarian(&x).unwrap().to_matrix::<f64>();
        let dist = |tau: f64, iters: usize| {
            sinkhorn(&x, &SinkhornConfig::new(tau, iters))
                .unwrap()
                .matrix()
                .max_abs_diff(&m)
                .unwrap()
        };
        let (warm, cold) = (dist(1.0, 200), dist(0.02, 2000));
        assert!(warm > 0.01, "seed {seed}: warm operator already a vertex");
        if cold < warm {
            closer += 1;
        }
    }
    assert_eq!(closer, 20);
}

#[test]
fn sinkhorn_beats_random_doubly_stochastic_points() {
    let tau = 0.5;
    let mut r = rng::stream(7, 1);
    for seed in 0..10 {
        let x = normal_logits(4, 100 + seed);
        let s = sinkhorn(&x, &SinkhornConfig::new(tau, 2000)).unwrap();
        let s = DoublyStochasticMatrix::new(s.into_matrix(), 1e-9).unwrap();
        let best = entropy_reg_objective(&s, &x, tau).unwrap();
        for _ in 0..200 {
            let p = random_ds(4, 1 + r.gen_range(0..6), &mut r);
            assert!(entropy_reg_objective(&p, &x, tau).unwrap() <= best + 1e-9);
        }
    }
}

#[test]
fn hungarian_agrees_with_exhaustive_search() {
    for seed in 0..60 {
        let n = 2 + (seed as usize % 6);
        let x = normal_logits(n, 1000 + seed);
        let fast = hungarian(&x).unwrap();
        let slow = brute_force_match(&x).unwrap();
        assert!((fast.objective(x.matrix()) - slow.value).abs() < 1e-12);
        assert_eq!(fast, slow.permutation);
    }
}

#[test]
fn gumbel_matching_is_uniform_at_zero_logits() {
    // 3! = 6 outcomes, all equally likely by symmetry
    let x = LogitsMatrix::<f64>::zeros(3);
    let draws = 6000;
    let mut counts = [0usize; 6];
    let index = |p: &Permutation| {
        let m = p.mapping();
        let rank = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        rank.iter().position(|r| r == m).unwrap()
    };
    for k in 0..draws {
        counts[index(&sample_gumbel_matching(&x, rng::derive_seed(11, k)).unwrap())] += 1;
    }
    let expected = draws as f64 / 6.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 5 degrees of freedom, 99.9th percentile
    assert!(chi2 < 20.5, "{counts:?} chi2 {chi2}");
}

#[test]
fn gumbel_matching_concentrates_on_the_mode_as_logits_grow() {
    let x = normal_logits(4, 3);
    let mode = hungarian(&x).unwrap();
    let freq = |scale: f64| {
        let y = LogitsMatrix::new(x.matrix().scale(scale)).unwrap();
        (0..500)
            .filter(|&k| sample_gumbel_matching(&y, rng::derive_seed(5, k)).unwrap() == mode)
            .count()
    };
    let (low, high) = (freq(1.0), freq(50.0));
    assert!(high > low && high > 490, "{low} {high}");
}

#[test]
fn short_sort_training_learns_three_items() {
    let cfg = TrainConfig {
        n: 3,
        n_units: 16,
        steps: 1500,
        seed: 2,
        ..TrainConfig::default()
    };
    let (params, log) = train_sort(&cfg).unwrap();
    let head: f64 = log.losses[..100].iter().sum::<f64>() / 100.0;
    let tail: f64 = log.losses[1400..].iter().sum::<f64>() / 100.0;
    assert!(tail < head * 0.5, "{head} -> {tail}");
    let m = evaluate_sort(&params, 0.0, 1.0, 1000, 9).unwrap();
    assert!(m.prop_any_wrong < 0.1, "{m:?}");
}

fn all_permutations(n: usize) -> Vec<Permutation> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..n).collect();
    fn extend(k: usize, current: &mut Vec<usize>, out: &mut Vec<Permutation>) {
        if k == current.len() {
            out.push(Permutation::new(current.clone()).unwrap());
            return;
        }
        for j in k..current.len() {
            current.swap(k, j);
            extend(k + 1, current, out);
            current.swap(k, j);
        }
    }
    extend(0, &mut current, &mut out);
    out
}

#[test]
fn sinkhorn_approximates_gibbs_marginals_better_than_uniform() {
    let perms = all_permutations(4);
    assert_eq!(perms.len(), 24);
    for seed in 0..20 {
        let x = normal_logits(4, 500 + seed);
        let weights: Vec<f64> = perms.iter().map(|p| p.objective(x.matrix()).exp()).collect();
        let z: f64 = weights.iter().sum();
        let exact = perms.iter().zip(&weights).fold(Matrix::zeros(4, 4), |acc, (p, w)| {
            acc.add(&p.to_matrix::<f64>().scale(w / z)).unwrap()
        });
        let l1 = |m: &Matrix<f64>| m.sub(&exact).unwrap().as_slice().iter().map(|v| v.abs()).sum::<f64>();
        let s = sinkhorn(&x, &SinkhornConfig::new(1.0, 200)).unwrap();
        let uniform = DoublyStochasticMatrix::<f64>::uniform(4);
        assert!(l1(s.matrix()) < l1(uniform.matrix()), "seed {seed}");
    }
}

#[test]
fn continuous_logits_have_a_unique_optimum() {
    let unique = (0..1000)
        .filter(|&seed| brute_force_match(&normal_logits(5, 10_000 + seed)).unwrap().is_unique)
        .count();
    assert_eq!(unique, 1000);
}

#[test]
fn hard_sort_reconstruction_ignores_input_order() {
    let mut r = rng::stream(21, 0);
    for _ in 0..20 {
        let n = r.gen_range(2..9);
        let params = SortNetParams::init(n, 12, &mut r);
        let x: Vec<f64> = (0..n).map(|_| r.gen::<f64>()).collect();
        let shuffled = Permutation::random(n, &mut r).scramble(&x).unwrap();
        let a = hard_sort(&x, &params).unwrap().reconstruct(&x).unwrap();
        let b = hard_sort(&shuffled, &params).unwrap().reconstruct(&shuffled).unwrap();
        assert_eq!(a, b);
    }
}

proptest! {
    #[test]
    fn processing_never_increases_kl(
        raw in proptest::collection::vec((0.01f64..1.0, 0.01f64..1.0, 0usize..3), 2..8)
    ) {
        let zq: f64 = raw.iter().map(|t| t.0).sum();
        let zp: f64 = raw.iter().map(|t| t.1).sum();
        let q: Vec<f64> = raw.iter().map(|t| t.0 / zq).collect();
        let p: Vec<f64> = raw.iter().map(|t| t.1 / zp).collect();
        let map: Vec<usize> = raw.iter().map(|t| t.2).collect();
        let check = kl_data_processing_check(&q, &p, &map).unwrap();
        prop_assert!(check.holds(), "{check:?}");
        prop_assert!(discrete_kl(&q, &q).unwrap().abs() < 1e-15);
    }
}
