//! End-to-end behavior of hyperparameter learning.

use gpgc_core::synth::{accuracy, random_problem, GroupedTaskConfig, GroupedTaskGenerator, ProblemShape};
use gpgc_core::{
    balance_weights, build_cache, posterior_mean, predict_labels, train, ConvergedBy, FeatureShard,
    GroupedDataset, LocalOracle, OptimizerConfig,
};

fn clean_config() -> GroupedTaskConfig {
    GroupedTaskConfig {
        n: 100,
        k: 5,
        n_groups: 10,
        n_corrupted: 0,
        group_spread: 0.5,
        instance_spread: 0.5,
        margin: 1.0,
    }
}

#[test]
fn clean_groups_get_small_noise_and_fit_perfectly() {
    for seed in 0..4 {
        let task = GroupedTaskGenerator::new(clean_config(), seed).training_set();
        let oracle = LocalOracle::new(task.features.clone());
        let (model, report) = train(&oracle, &task.dataset, &[0; 5], &OptimizerConfig::default()).unwrap();
        assert!(model.hyper.eps.iter().all(|&e| e < 0.5), "seed {seed}: {:?}", model.hyper.eps);
        let pred = predict_labels(&model, (0..100).map(|i| task.features.instance(i))).unwrap();
        assert_eq!(accuracy(&pred, task.dataset.labels()), 1.0);
        assert!(matches!(report.converged_by, ConvergedBy::Gradient | ConvergedBy::Objective));
    }
}

#[test]
fn flipped_groups_get_the_largest_noise() {
    for seed in 0..4 {
        let cfg = GroupedTaskConfig { n: 100, k: 5, n_groups: 10, n_corrupted: 2, ..Default::default() };
        let task = GroupedTaskGenerator::new(cfg, seed).training_set();
        let oracle = LocalOracle::new(task.features.clone());
        let (model, _) = train(&oracle, &task.dataset, &[0; 5], &OptimizerConfig::default()).unwrap();
        let ranking = model.confidence_ranking();
        let least_confident: Vec<usize> = ranking[8..].to_vec();
        for g in least_confident {
            assert!(task.corrupted[g], "seed {seed}: group {g} ranked low but is clean");
        }
    }
}

#[test]
fn scalar_problem_reaches_the_stationary_ridge() {
    // With one instance the objective is -1/2 (y^2 / v + ln v) + const with
    // v = sigma^2 phi^2 + eps^2, maximized on the ridge v = y^2.
    let f = FeatureShard::new(vec![0.5], 1, 0).unwrap();
    let ds = GroupedDataset::new(vec![1.0], vec![0], 1).unwrap();
    let (model, _) = train(&LocalOracle::new(f), &ds, &[0], &OptimizerConfig::default()).unwrap();
    let v = model.hyper.sigma[0].powi(2) * 0.25 + model.hyper.eps[0].powi(2);
    assert!((v - 1.0).abs() < 1e-5, "v = {v}");
}

#[test]
fn accepted_steps_never_decrease_the_objective() {
    let cfg = GroupedTaskConfig { n: 300, n_groups: 12, n_corrupted: 3, ..Default::default() };
    let task = GroupedTaskGenerator::new(cfg, 11).training_set();
    let oracle = LocalOracle::new(task.features.clone());
    let (_, report) = train(&oracle, &task.dataset, &[0; 10], &OptimizerConfig::default()).unwrap();
    assert!(report.lml_trace.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(*report.lml_trace.last().unwrap(), report.final_lml);
}

#[test]
fn training_is_deterministic() {
    let task = GroupedTaskGenerator::new(GroupedTaskConfig { n: 200, ..Default::default() }, 4).training_set();
    let config = OptimizerConfig { restarts: 3, seed: 9, ..Default::default() };
    let run = || {
        let oracle = LocalOracle::new(task.features.clone());
        train(&oracle, &task.dataset, &[0; 10], &config).unwrap()
    };
    let (m1, r1) = run();
    let (m2, r2) = run();
    assert_eq!(m1.to_text(), m2.to_text());
    assert_eq!(r1, r2);
}

#[test]
fn restarts_never_end_worse_than_the_first_run() {
    let task = GroupedTaskGenerator::new(GroupedTaskConfig { n: 200, ..Default::default() }, 5).training_set();
    let oracle = LocalOracle::new(task.features.clone());
    let single = train(&oracle, &task.dataset, &[0; 10], &OptimizerConfig::default()).unwrap().1;
    let multi = train(
        &oracle,
        &task.dataset,
        &[0; 10],
        &OptimizerConfig { restarts: 4, seed: 1, ..Default::default() },
    )
    .unwrap()
    .1;
    assert_eq!(multi.runs, 4);
    assert!(multi.final_lml >= single.final_lml);
}

#[test]
fn scaling_features_leaves_predicted_signs_unchanged() {
    let mut gen = GroupedTaskGenerator::new(GroupedTaskConfig { n: 200, n_corrupted: 1, ..Default::default() }, 6);
    let task = gen.training_set();
    let test = gen.test_set(300, 6);
    let scale = |f: &FeatureShard, c: f64| {
        FeatureShard::new(f.data().iter().map(|x| x * c).collect(), f.k(), 0).unwrap()
    };
    let c = 3.0;
    let (m1, _) = train(&LocalOracle::new(task.features.clone()), &task.dataset, &[0; 10], &OptimizerConfig::default()).unwrap();
    let scaled = scale(&task.features, c);
    let (m2, _) = train(&LocalOracle::new(scaled), &task.dataset, &[0; 10], &OptimizerConfig::default()).unwrap();
    let test_scaled = scale(&test.features, c);
    let p1 = predict_labels(&m1, (0..300).map(|i| test.features.instance(i))).unwrap();
    let p2 = predict_labels(&m2, (0..300).map(|i| test_scaled.instance(i))).unwrap();
    assert_eq!(p1, p2);
}

#[test]
fn predicted_labels_agree_with_posterior_mean_signs() {
    let p = random_problem(ProblemShape { n: 60, k: 6, n_groups: 4, n_scales: 2, weighted: false }, 21);
    let oracle = LocalOracle::new(p.features.clone());
    let (model, _) = train(&oracle, &p.dataset, &p.hyper.scale_group_of, &OptimizerConfig::default()).unwrap();
    let cache = build_cache(&oracle, &p.dataset, &model.hyper).unwrap();
    let labels = predict_labels(&model, (0..60).map(|i| p.features.instance(i))).unwrap();
    for (i, l) in labels.iter().enumerate() {
        let m = posterior_mean(&cache, p.features.instance(i)).unwrap();
        assert_eq!(*l, if m >= 0.0 { 1.0 } else { -1.0 });
    }
}

#[test]
fn balanced_weights_compose_with_confidence_learning() {
    let cfg = GroupedTaskConfig { n: 200, n_corrupted: 2, ..Default::default() };
    let task = GroupedTaskGenerator::new(cfg, 8).training_set();
    let mut ds = task.dataset.clone();
    let w = balance_weights(&ds).unwrap();
    ds.set_weights(w).unwrap();
    let (model, report) = train(&LocalOracle::new(task.features.clone()), &ds, &[0; 10], &OptimizerConfig::default()).unwrap();
    assert!(report.final_lml.is_finite());
    assert_eq!(model.n_groups(), 20);
}

#[test]
fn rejects_mismatched_scale_groups() {
    let p = random_problem(ProblemShape { n: 10, k: 3, n_groups: 2, n_scales: 1, weighted: false }, 1);
    let oracle = LocalOracle::new(p.features.clone());
    assert!(train(&oracle, &p.dataset, &[0, 0], &OptimizerConfig::default()).is_err());
    assert!(train(&oracle, &p.dataset, &[0, 2, 2], &OptimizerConfig::default()).is_err());
}
