//! Seeded synthetic data: random problems for numerical checks and a
//! grouped linear classification task with whole groups mislabeled.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::GroupedDataset;
use crate::hyper::HyperParams;
use crate::oracle::FeatureShard;

/// A random GP problem with random hyperparameters.
#[derive(Debug, Clone)]
pub struct RandomProblem {
    pub features: FeatureShard,
    pub dataset: GroupedDataset,
    pub hyper: HyperParams,
}

/// Shape of a [`random_problem`].
#[derive(Debug, Clone, Copy)]
pub struct ProblemShape {
    pub n: usize,
    pub k: usize,
    pub n_groups: usize,
    pub n_scales: usize,
    /// Draw weights from `[0.25, 4)` instead of using ones.
    pub weighted: bool,
}

/// Standard-normal features scaled by `1/sqrt(k)`, random labels, every group
/// non-empty, `eps` and `sigma` drawn log-uniformly around one.
pub fn random_problem(shape: ProblemShape, seed: u64) -> RandomProblem {
    let ProblemShape {
        n,
        k,
        n_groups,
        n_scales,
        weighted,
    } = shape;
    assert!(n_groups >= 1 && n_groups <= n && n_scales >= 1 && n_scales <= k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (k as f64).sqrt();
    let data: Vec<f64> = (0..n * k)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let labels: Vec<f64> = (0..n)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let group_of: Vec<usize> = (0..n)
        .map(|i| if i < n_groups { i } else { rng.random_range(0..n_groups) })
        .collect();
    let weights: Vec<f64> = (0..n)
        .map(|_| if weighted { rng.random_range(0.25..4.0) } else { 1.0 })
        .collect();
    let scale_group_of: Vec<usize> = (0..k)
        .map(|j| if j < n_scales { j } else { rng.random_range(0..n_scales) })
        .collect();
    let eps = (0..n_groups).map(|_| rng.random_range(-1.0f64..1.0).exp()).collect();
    let sigma = (0..n_scales).map(|_| rng.random_range(-1.0f64..1.0).exp()).collect();
    RandomProblem {
        features: FeatureShard::new(data, k, 0).expect("finite by construction"),
        dataset: GroupedDataset::with_weights(labels, group_of, n_groups, weights)
            .expect("valid by construction"),
        hyper: HyperParams::new(eps, sigma, scale_group_of).expect("positive by construction"),
    }
}

/// Parameters of the grouped linear task.
#[derive(Debug, Clone, Copy)]
pub struct GroupedTaskConfig {
    pub n: usize,
    /// Feature dimension including the trailing constant feature.
    pub k: usize,
    pub n_groups: usize,
    /// Number of groups whose labels are all flipped.
    pub n_corrupted: usize,
    /// Standard deviation of the per-group feature offsets.
    pub group_spread: f64,
    /// Standard deviation of instances around their group offset.
    pub instance_spread: f64,
    /// Minimum `|w . x|` of accepted instances.
    pub margin: f64,
}

impl Default for GroupedTaskConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            k: 10,
            n_groups: 20,
            n_corrupted: 4,
            group_spread: 1.0,
            instance_spread: 1.0,
            margin: 0.5,
        }
    }
}

/// Instances of a grouped task with clean and observed labels.
#[derive(Debug, Clone)]
pub struct GroupedTask {
    pub features: FeatureShard,
    /// Observed (possibly flipped) labels, groups and unit weights.
    pub dataset: GroupedDataset,
    pub clean_labels: Vec<f64>,
    pub corrupted: Vec<bool>,
}

/// Generator for a linearly separable problem whose instances come in groups.
///
/// Each group has its own random offset in feature space, like images of
/// different appearance, and the label is the sign of a fixed hidden linear
/// function with a margin. Corrupted groups have every label flipped.
#[derive(Debug, Clone)]
pub struct GroupedTaskGenerator {
    config: GroupedTaskConfig,
    direction: Vec<f64>,
    rng: ChaCha8Rng,
}

impl GroupedTaskGenerator {
    pub fn new(config: GroupedTaskConfig, seed: u64) -> Self {
        assert!(config.k >= 2, "need at least one feature besides the constant");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut direction: Vec<f64> = (0..config.k - 1)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        direction.iter_mut().for_each(|x| *x /= norm);
        Self {
            config,
            direction,
            rng,
        }
    }

    pub fn config(&self) -> &GroupedTaskConfig {
        &self.config
    }

    /// Draws a training set with `n_corrupted` randomly chosen flipped groups.
    pub fn training_set(&mut self) -> GroupedTask {
        let c = self.config;
        let flipped = sample(&mut self.rng, c.n_groups, c.n_corrupted);
        let mut corrupted = vec![false; c.n_groups];
        for g in flipped {
            corrupted[g] = true;
        }
        self.draw(c.n, c.n_groups, &corrupted)
    }

    /// Draws clean instances from fresh groups.
    pub fn test_set(&mut self, n: usize, n_groups: usize) -> GroupedTask {
        self.draw(n, n_groups, &vec![false; n_groups])
    }

    fn draw(&mut self, n: usize, n_groups: usize, corrupted: &[bool]) -> GroupedTask {
        let c = self.config;
        let d = c.k - 1;
        let offsets: Vec<Vec<f64>> = (0..n_groups)
            .map(|_| {
                (0..d)
                    .map(|_| c.group_spread * self.rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let mut data = Vec::with_capacity(n * c.k);
        let mut clean_labels = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let mut group_of = Vec::with_capacity(n);
        for i in 0..n {
            let g = i * n_groups / n;
            let x = loop {
                let x: Vec<f64> = offsets[g]
                    .iter()
                    .map(|o| o + c.instance_spread * self.rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let score: f64 = x.iter().zip(&self.direction).map(|(a, b)| a * b).sum();
                if score.abs() >= c.margin {
                    break x;
                }
            };
            let score: f64 = x.iter().zip(&self.direction).map(|(a, b)| a * b).sum();
            let y = if score > 0.0 { 1.0 } else { -1.0 };
            data.extend_from_slice(&x);
            data.push(1.0);
            clean_labels.push(y);
            labels.push(if corrupted[g] { -y } else { y });
            group_of.push(g);
        }
        GroupedTask {
            features: FeatureShard::new(data, c.k, 0).expect("finite by construction"),
            dataset: GroupedDataset::new(labels, group_of, n_groups).expect("valid by construction"),
            clean_labels,
            corrupted: corrupted.to_vec(),
        }
    }
}

/// Area under the ROC curve of `scores` for detecting `positives`; ties
/// count one half.
pub fn roc_auc(scores: &[f64], positives: &[bool]) -> f64 {
    let mut pairs = 0.0;
    let mut wins = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !positives[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if positives[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Fraction of equal entries.
pub fn accuracy(predicted: &[f64], truth: &[f64]) -> f64 {
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}
