//! Instance weights against physically duplicated data, and relabeling of
//! groups.

use gpgc_core::synth::{random_problem, ProblemShape};
use gpgc_core::{
    build_cache, grad_noise, grad_scales, posterior_mean, reweighted_log_marginal, FeatureShard,
    GroupedDataset, HyperParams, LocalOracle,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Pair {
    weighted: (FeatureShard, GroupedDataset),
    duplicated: (FeatureShard, GroupedDataset),
    hyper: Vec<HyperParams>,
}

fn pair(seed: u64) -> Pair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = random_problem(
        ProblemShape { n: 40, k: 5, n_groups: 6, n_scales: 2, weighted: false },
        seed,
    );
    let n = p.dataset.n_instances();
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(1..=4) as f64).collect();
    let weighted = GroupedDataset::with_weights(
        p.dataset.labels().to_vec(),
        p.dataset.group_of().to_vec(),
        p.dataset.n_groups(),
        weights.clone(),
    )
    .unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for i in 0..n {
        for _ in 0..weights[i] as usize {
            rows.push(p.features.instance(i).to_vec());
            labels.push(p.dataset.labels()[i]);
            groups.push(p.dataset.group_of()[i]);
        }
    }
    let dup = GroupedDataset::new(labels, groups, p.dataset.n_groups()).unwrap();
    let hyper = (0..4)
        .map(|_| {
            let eps = (0..6).map(|_| rng.random_range(0.3..2.0)).collect();
            let sigma = (0..2).map(|_| rng.random_range(0.3..2.0)).collect();
            HyperParams::new(eps, sigma, p.hyper.scale_group_of.clone()).unwrap()
        })
        .collect();
    Pair {
        weighted: (p.features, weighted),
        duplicated: (FeatureShard::from_rows(&rows).unwrap(), dup),
        hyper,
    }
}

fn objective(data: &(FeatureShard, GroupedDataset), hp: &HyperParams) -> f64 {
    let c = build_cache(&LocalOracle::new(data.0.clone()), &data.1, hp).unwrap();
    reweighted_log_marginal(&c, &data.1).unwrap()
}

#[test]
fn objective_differences_match_duplicated_data() {
    for seed in 0..5 {
        let p = pair(seed);
        let w: Vec<f64> = p.hyper.iter().map(|h| objective(&p.weighted, h)).collect();
        let d: Vec<f64> = p.hyper.iter().map(|h| objective(&p.duplicated, h)).collect();
        for a in 1..w.len() {
            let dw = w[a] - w[0];
            let dd = d[a] - d[0];
            assert!((dw - dd).abs() <= 1e-8 * dd.abs().max(1.0), "seed {seed}: {dw} vs {dd}");
        }
    }
}

#[test]
fn gradients_match_duplicated_data() {
    for seed in 10..13 {
        let p = pair(seed);
        for h in &p.hyper {
            let grad = |data: &(FeatureShard, GroupedDataset)| {
                let c = build_cache(&LocalOracle::new(data.0.clone()), &data.1, h).unwrap();
                let mut g = grad_noise(&c, h, &data.1).unwrap();
                g.extend(grad_scales(&c, h).unwrap());
                g
            };
            let (gw, gd) = (grad(&p.weighted), grad(&p.duplicated));
            for (a, b) in gw.iter().zip(&gd) {
                assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
            }
        }
    }
}

#[test]
fn posterior_means_match_duplicated_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for seed in 20..25 {
        let p = pair(seed);
        for h in &p.hyper {
            let cw = build_cache(&LocalOracle::new(p.weighted.0.clone()), &p.weighted.1, h).unwrap();
            let cd = build_cache(&LocalOracle::new(p.duplicated.0.clone()), &p.duplicated.1, h).unwrap();
            for _ in 0..5 {
                let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
                let (a, b) = (posterior_mean(&cw, &x).unwrap(), posterior_mean(&cd, &x).unwrap());
                assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
            }
        }
    }
}

#[test]
fn weight_four_equals_quarter_noise_variance() {
    let p = random_problem(ProblemShape { n: 25, k: 3, n_groups: 1, n_scales: 1, weighted: false }, 3);
    let w4 = GroupedDataset::with_weights(p.dataset.labels().to_vec(), vec![0; 25], 1, vec![4.0; 25]).unwrap();
    let hp = HyperParams::new(vec![0.8], vec![1.1], vec![0; 3]).unwrap();
    let halved = HyperParams::new(vec![0.4], vec![1.1], vec![0; 3]).unwrap();
    let oracle = LocalOracle::new(p.features.clone());
    let a = build_cache(&oracle, &w4, &hp).unwrap();
    let b = build_cache(&oracle, &p.dataset, &halved).unwrap();
    for (x, y) in a.alpha().iter().zip(b.alpha()) {
        assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
    }
}

#[test]
fn relabeling_groups_permutes_gradients() {
    let p = random_problem(ProblemShape { n: 50, k: 4, n_groups: 5, n_scales: 2, weighted: true }, 12);
    let perm = [3usize, 0, 4, 1, 2];
    let relabeled = GroupedDataset::with_weights(
        p.dataset.labels().to_vec(),
        p.dataset.group_of().iter().map(|&g| perm[g]).collect(),
        5,
        p.dataset.weights().to_vec(),
    )
    .unwrap();
    let mut eps = vec![0.0; 5];
    for g in 0..5 {
        eps[perm[g]] = p.hyper.eps[g];
    }
    let hp2 = HyperParams::new(eps, p.hyper.sigma.clone(), p.hyper.scale_group_of.clone()).unwrap();
    let oracle = LocalOracle::new(p.features.clone());
    let c1 = build_cache(&oracle, &p.dataset, &p.hyper).unwrap();
    let c2 = build_cache(&oracle, &relabeled, &hp2).unwrap();
    let l1 = reweighted_log_marginal(&c1, &p.dataset).unwrap();
    let l2 = reweighted_log_marginal(&c2, &relabeled).unwrap();
    assert!((l1 - l2).abs() <= 1e-12 * l1.abs());
    let g1 = grad_noise(&c1, &p.hyper, &p.dataset).unwrap();
    let g2 = grad_noise(&c2, &hp2, &relabeled).unwrap();
    for g in 0..5 {
        assert!((g1[g] - g2[perm[g]]).abs() <= 1e-12 * g1[g].abs().max(1.0));
    }
}
