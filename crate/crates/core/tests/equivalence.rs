//! Low-rank inference against dense computations and finite differences.

use gpgc_core::reference::{lemma_log_det, woodbury_inverse, Coordinate, DenseGp};
use gpgc_core::synth::{random_problem, ProblemShape, RandomProblem};
use gpgc_core::{
    build_cache, grad_noise, grad_scales, log_marginal, posterior_mean, posterior_variance,
    reweighted_log_marginal, FeatureShard, GroupedDataset, HyperParams, LocalOracle,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

fn draw(seed: u64, max_n: usize) -> RandomProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(20..=max_n);
    let k = rng.random_range(2..=20);
    let shape = ProblemShape {
        n,
        k,
        n_groups: rng.random_range(1..=n),
        n_scales: rng.random_range(1..=k),
        weighted: rng.random_bool(0.5),
    };
    random_problem(shape, seed.wrapping_mul(31).wrapping_add(7))
}

/// `K = diag(eps_g^2 / w_i) + F^T Sigma F` built with plain loops.
fn loop_kernel(p: &RandomProblem) -> Vec<Vec<f64>> {
    let n = p.dataset.n_instances();
    let sig = p.hyper.feature_variances();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (p.features.instance(i), p.features.instance(j));
            k[i][j] = (0..a.len()).map(|t| a[t] * sig[t] * b[t]).sum();
        }
        let e = p.hyper.eps[p.dataset.group_of()[i]];
        k[i][i] += e * e / p.dataset.weights()[i];
    }
    k
}

#[test]
fn dense_reference_matches_loop_kernel() {
    for seed in 0..5 {
        let p = draw(seed, 60);
        let dense = DenseGp::new(&p.features, &p.dataset, &p.hyper).unwrap();
        let k = loop_kernel(&p);
        for (i, row) in k.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!((dense.k_eps()[(i, j)] - v).abs() <= 1e-13 * v.abs().max(1.0));
            }
        }
    }
}

#[test]
fn low_rank_matches_dense_on_twenty_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seed in 0..20 {
        let p = draw(seed, 200);
        let oracle = LocalOracle::new(p.features.clone());
        let cache = build_cache(&oracle, &p.dataset, &p.hyper).unwrap();
        let dense = DenseGp::new(&p.features, &p.dataset, &p.hyper).unwrap();
        assert!(rel(log_marginal(&cache), dense.lml()) < 1e-8, "seed {seed}");
        let inv_diag = dense.inv_diag();
        for i in 0..p.dataset.n_instances() {
            assert!(rel(cache.alpha()[i], dense.alpha()[i]) < 1e-8 || (cache.alpha()[i] - dense.alpha()[i]).abs() < 1e-12);
            assert!(rel(cache.inv_diag()[i], inv_diag[i]) < 1e-8);
        }
        for _ in 0..5 {
            let x: Vec<f64> = (0..p.features.k()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let m = posterior_mean(&cache, &x).unwrap();
            assert!((m - dense.posterior_mean(&x)).abs() <= 1e-8 * dense.posterior_mean(&x).abs().max(1e-4));
            let v = posterior_variance(&cache, &x).unwrap();
            assert!(rel(v, dense.posterior_variance(&x)) < 1e-8);
        }
    }
}

#[test]
fn woodbury_and_determinant_lemma_entrywise() {
    for seed in 100..110 {
        let p = draw(seed, 100);
        let dense = DenseGp::new(&p.features, &p.dataset, &p.hyper).unwrap();
        let direct = dense.inverse();
        let smw = woodbury_inverse(&dense).unwrap();
        let scale = direct.amax();
        assert!((&smw - &direct).amax() <= 1e-9 * scale);
        assert!(rel(lemma_log_det(&dense).unwrap(), dense.log_det()) < 1e-9);
    }
}

/// Plain central difference of the reweighted objective in one coordinate.
fn fd(p: &RandomProblem, coord: usize) -> f64 {
    let oracle = LocalOracle::new(p.features.clone());
    let theta = p.hyper.to_vec();
    let h = 1e-5 * theta[coord];
    let eval = |x: f64| {
        let mut t = theta.clone();
        t[coord] = x;
        let hp = p.hyper.with_values(&t).unwrap();
        let c = build_cache(&oracle, &p.dataset, &hp).unwrap();
        reweighted_log_marginal(&c, &p.dataset).unwrap()
    };
    (eval(theta[coord] + h) - eval(theta[coord] - h)) / (2.0 * h)
}

#[test]
fn gradients_match_finite_differences_and_trace_formula() {
    for seed in 200..210 {
        let p = draw(seed, 80);
        let oracle = LocalOracle::new(p.features.clone());
        let cache = build_cache(&oracle, &p.dataset, &p.hyper).unwrap();
        let mut g = grad_noise(&cache, &p.hyper, &p.dataset).unwrap();
        g.extend(grad_scales(&cache, &p.hyper).unwrap());
        let dense = DenseGp::new(&p.features, &p.dataset, &p.hyper).unwrap();
        let coords: Vec<Coordinate> = (0..p.hyper.n_groups())
            .map(Coordinate::Noise)
            .chain((0..p.hyper.n_scales()).map(Coordinate::Scale))
            .collect();
        for (c, which) in coords.into_iter().enumerate() {
            let trace = dense.grad(which).unwrap();
            assert!((g[c] - trace).abs() <= 1e-8 * trace.abs().max(1e-3), "seed {seed} coord {c}");
            let numeric = fd(&p, c);
            assert!((g[c] - numeric).abs() <= 1e-5 * numeric.abs().max(1e-2), "seed {seed} coord {c}: {} vs {numeric}", g[c]);
        }
    }
}

#[test]
fn untied_noise_is_a_special_case() {
    // G = N: each instance has its own noise; tying over a single group
    // must equal the sum of the untied gradients.
    let p = random_problem(
        ProblemShape { n: 30, k: 4, n_groups: 30, n_scales: 1, weighted: true },
        5,
    );
    let ones = vec![0usize; 30];
    let tied = GroupedDataset::with_weights(p.dataset.labels().to_vec(), ones, 1, p.dataset.weights().to_vec()).unwrap();
    let hp_tied = HyperParams::new(vec![0.7], p.hyper.sigma.clone(), p.hyper.scale_group_of.clone()).unwrap();
    let hp_free = HyperParams::new(vec![0.7; 30], p.hyper.sigma.clone(), p.hyper.scale_group_of.clone()).unwrap();
    let oracle = LocalOracle::new(p.features.clone());
    let g_tied = grad_noise(&build_cache(&oracle, &tied, &hp_tied).unwrap(), &hp_tied, &tied).unwrap();
    let g_free = grad_noise(&build_cache(&oracle, &p.dataset, &hp_free).unwrap(), &hp_free, &p.dataset).unwrap();
    assert!(rel(g_tied[0], g_free.iter().sum()) < 1e-12);
}

#[test]
fn scale_tying_sums_per_feature_gradients() {
    let p = random_problem(ProblemShape { n: 40, k: 6, n_groups: 3, n_scales: 6, weighted: false }, 8);
    let oracle = LocalOracle::new(p.features.clone());
    let free = HyperParams::new(p.hyper.eps.clone(), vec![0.9; 6], (0..6).collect()).unwrap();
    let tied = HyperParams::new(p.hyper.eps.clone(), vec![0.9, 0.9], vec![0, 0, 1, 1, 1, 0]).unwrap();
    let gf = grad_scales(&build_cache(&oracle, &p.dataset, &free).unwrap(), &free).unwrap();
    let gt = grad_scales(&build_cache(&oracle, &p.dataset, &tied).unwrap(), &tied).unwrap();
    assert!(rel(gt[0], gf[0] + gf[1] + gf[5]) < 1e-12);
    assert!(rel(gt[1], gf[2] + gf[3] + gf[4]) < 1e-12);
}

#[test]
fn zero_feature_instance_has_prior_mean() {
    let f = FeatureShard::new(vec![1.0, 0.5, -0.3, 2.0], 2, 0).unwrap();
    let ds = GroupedDataset::new(vec![1.0, -1.0], vec![0, 1], 2).unwrap();
    let hp = HyperParams::new(vec![0.5, 0.5], vec![1.0], vec![0, 0]).unwrap();
    let cache = build_cache(&LocalOracle::new(f), &ds, &hp).unwrap();
    assert_eq!(posterior_mean(&cache, &[0.0, 0.0]).unwrap(), 0.0);
    assert_eq!(posterior_variance(&cache, &[0.0, 0.0]).unwrap(), 0.0);
}
