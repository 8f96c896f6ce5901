//! Self-checks of the low-rank implementation against independent oracles.
//!
//! Every check draws random problems, computes a quantity with the Woodbury
//! machinery and compares it with a dense `N x N` computation, a finite
//! difference or a differently sharded oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::GroupedDataset;
use crate::error::Result;
use crate::gp::{
    build_cache, grad_noise, grad_scales, posterior_mean, posterior_variance_unclamped,
    reweighted_log_marginal, log_marginal,
};
use crate::hyper::HyperParams;
use crate::oracle::{FeatureOracle, LocalOracle};
use crate::reference::{lemma_log_det, woodbury_inverse, Coordinate, DenseGp};
use crate::synth::{random_problem, ProblemShape, RandomProblem};

pub const DENSE_TOL: f64 = 1e-8;
pub const IDENTITY_TOL: f64 = 1e-9;
pub const GRADIENT_TOL: f64 = 1e-5;
pub const SHARD_TOL: f64 = 1e-10;

/// Denominator floor for gradient coordinates that are essentially zero.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// Finite-difference step relative to the coordinate value.
pub const FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub seed: u64,
    pub draws: usize,
    /// Scale the analytic gradient by `1 + 1e-3` before comparing; the
    /// gradient check must then fail.
    pub perturb_gradient: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            draws: 20,
            perturb_gradient: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub worst_error: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, worst_error: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed: worst_error <= tolerance,
            worst_error,
            tolerance,
            detail,
        }
    }

    fn failed(name: &str, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed: false,
            worst_error: f64::INFINITY,
            tolerance,
            detail,
        }
    }
}

/// `|a - b| / max(|b|, floor)`; NaN maps to infinity.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let e = (a - b).abs() / b.abs().max(floor);
    if e.is_nan() {
        f64::INFINITY
    } else {
        e
    }
}

/// `max_i |a_i - b_i| / max(max_i |b_i|, floor)`.
pub fn vector_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(floor, |m, x| m.max(x.abs()));
    let e = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if e.is_nan() {
        f64::INFINITY
    } else {
        e / scale
    }
}

/// Central difference with one Richardson extrapolation step,
/// `(4 D(h/2) - D(h)) / 3`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    let d = |f: &mut dyn FnMut(f64) -> f64, h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    let coarse = d(&mut f, h);
    let fine = d(&mut f, h / 2.0);
    (4.0 * fine - coarse) / 3.0
}

/// Random shape with `N` in 20..=200, `k` in 2..=20, `G` in 1..=N.
pub fn random_shape(rng: &mut impl Rng, weighted: bool) -> ProblemShape {
    let n = rng.random_range(20..=200);
    let k = rng.random_range(2..=20);
    ProblemShape {
        n,
        k,
        n_groups: rng.random_range(1..=n),
        n_scales: rng.random_range(1..=k),
        weighted,
    }
}

fn draws(opts: &VerifyOptions, salt: u64, max_n: usize) -> Vec<RandomProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ salt);
    (0..opts.draws)
        .map(|_| {
            let mut shape = random_shape(&mut rng, true);
            if shape.n > max_n {
                shape.n = max_n;
                shape.n_groups = shape.n_groups.min(max_n);
            }
            random_problem(shape, rng.random())
        })
        .collect()
}

fn random_point(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Low-rank likelihood, `alpha`, `diag(K^-1)` and posterior moments against
/// the dense reference.
pub fn check_dense_equivalence(opts: &VerifyOptions) -> CheckOutcome {
    const NAME: &str = "dense equivalence";
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xD15E);
    for (d, p) in draws(opts, 0xA11, 200).iter().enumerate() {
        let res = (|| -> Result<f64> {
            let oracle = LocalOracle::new(p.features.clone());
            let cache = build_cache(&oracle, &p.dataset, &p.hyper)?;
            let dense = DenseGp::new(&p.features, &p.dataset, &p.hyper)?;
            let mut errs = vec![
                relative_error(log_marginal(&cache), dense.lml(), 1.0),
                vector_relative_error(cache.alpha(), dense.alpha(), 1e-300),
                vector_relative_error(cache.inv_diag(), &dense.inv_diag(), 1e-300),
            ];
            for _ in 0..5 {
                let x = random_point(&mut rng, p.features.k());
                errs.push(relative_error(
                    posterior_mean(&cache, &x)?,
                    dense.posterior_mean(&x),
                    1e-12,
                ));
                errs.push(relative_error(
                    posterior_variance_unclamped(&cache, &x)?,
                    dense.posterior_variance(&x),
                    1e-12,
                ));
            }
            Ok(errs.into_iter().fold(0.0, f64::max))
        })();
        match res {
            Ok(e) => worst = worst.max(e),
            Err(e) => return CheckOutcome::failed(NAME, DENSE_TOL, format!("draw {d}: {e}")),
        }
    }
    CheckOutcome::new(NAME, worst, DENSE_TOL, format!("{} draws", opts.draws))
}

/// Woodbury inverse and determinant lemma, entrywise against direct dense
/// inversion and factorization, with `N <= 100`.
pub fn check_identities(opts: &VerifyOptions) -> CheckOutcome {
    const NAME: &str = "woodbury and determinant lemma";
    let mut worst = 0.0f64;
    for (d, p) in draws(opts, 0xB22, 100).iter().enumerate() {
        let res = (|| -> Result<f64> {
            let dense = DenseGp::new(&p.features, &p.dataset, &p.hyper)?;
            let direct = dense.inverse();
            let smw = woodbury_inverse(&dense)?;
            let e_inv = vector_relative_error(smw.as_slice(), direct.as_slice(), 1e-300);
            let e_det = relative_error(lemma_log_det(&dense)?, dense.log_det(), 1.0);
            let oracle = LocalOracle::new(p.features.clone());
            let cache = build_cache(&oracle, &p.dataset, &p.hyper)?;
            let e_cache = relative_error(cache.log_det(), dense.log_det(), 1.0);
            Ok(e_inv.max(e_det).max(e_cache))
        })();
        match res {
            Ok(e) => worst = worst.max(e),
            Err(e) => return CheckOutcome::failed(NAME, IDENTITY_TOL, format!("draw {d}: {e}")),
        }
    }
    CheckOutcome::new(NAME, worst, IDENTITY_TOL, format!("{} draws", opts.draws))
}

/// Analytic gradient of the reweighted objective, noise then scales, in the
/// order of [`HyperParams::to_vec`].
pub fn analytic_gradient(
    oracle: &dyn FeatureOracle,
    dataset: &GroupedDataset,
    hyper: &HyperParams,
) -> Result<Vec<f64>> {
    let cache = build_cache(oracle, dataset, hyper)?;
    let mut g = grad_noise(&cache, hyper, dataset)?;
    g.extend(grad_scales(&cache, hyper)?);
    Ok(g)
}

/// Reweighted objective at `hyper`.
pub fn objective(oracle: &dyn FeatureOracle, dataset: &GroupedDataset, hyper: &HyperParams) -> Result<f64> {
    let cache = build_cache(oracle, dataset, hyper)?;
    reweighted_log_marginal(&cache, dataset)
}

/// Finite-difference gradient of [`objective`], stepping each coordinate by
/// [`FD_STEP`] of its value.
pub fn numeric_gradient(
    oracle: &dyn FeatureOracle,
    dataset: &GroupedDataset,
    hyper: &HyperParams,
) -> Result<Vec<f64>> {
    let theta = hyper.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for c in 0..theta.len() {
        let mut err = None;
        let d = central_difference(
            |x| {
                let mut t = theta.clone();
                t[c] = x;
                match hyper.with_values(&t).and_then(|h| objective(oracle, dataset, &h)) {
                    Ok(v) => v,
                    Err(e) => {
                        err.get_or_insert(e);
                        f64::NAN
                    }
                }
            },
            theta[c],
            FD_STEP * theta[c],
        );
        if let Some(e) = err {
            return Err(e);
        }
        out.push(d);
    }
    Ok(out)
}

fn perturbed(mut g: Vec<f64>, on: bool) -> Vec<f64> {
    if on {
        for x in &mut g {
            *x = *x * (1.0 + 1e-3) + 1e-3;
        }
    }
    g
}

/// Worst per-coordinate relative error between the analytic gradient and
/// central differences.
pub fn check_finite_differences(opts: &VerifyOptions) -> CheckOutcome {
    const NAME: &str = "gradient vs finite differences";
    let mut worst = 0.0f64;
    for (d, p) in draws(opts, 0xC33, 200).iter().enumerate() {
        let res = (|| -> Result<f64> {
            let oracle = LocalOracle::new(p.features.clone());
            let a = perturbed(analytic_gradient(&oracle, &p.dataset, &p.hyper)?, opts.perturb_gradient);
            let n = numeric_gradient(&oracle, &p.dataset, &p.hyper)?;
            Ok(a.iter()
                .zip(&n)
                .map(|(&a, &n)| relative_error(a, n, GRADIENT_FLOOR))
                .fold(0.0, f64::max))
        })();
        match res {
            Ok(e) => worst = worst.max(e),
            Err(e) => return CheckOutcome::failed(NAME, GRADIENT_TOL, format!("draw {d}: {e}")),
        }
    }
    CheckOutcome::new(NAME, worst, GRADIENT_TOL, format!("{} draws", opts.draws))
}

/// Analytic gradient against the dense trace formula.
pub fn check_dense_gradient(opts: &VerifyOptions) -> CheckOutcome {
    const NAME: &str = "gradient vs dense trace formula";
    let mut worst = 0.0f64;
    for (d, p) in draws(opts, 0xD44, 120).iter().enumerate() {
        let res = (|| -> Result<f64> {
            let oracle = LocalOracle::new(p.features.clone());
            let a = perturbed(analytic_gradient(&oracle, &p.dataset, &p.hyper)?, opts.perturb_gradient);
            let dense = DenseGp::new(&p.features, &p.dataset, &p.hyper)?;
            let coords = (0..p.hyper.n_groups())
                .map(Coordinate::Noise)
                .chain((0..p.hyper.n_scales()).map(Coordinate::Scale));
            let mut e = 0.0f64;
            for (c, which) in coords.enumerate() {
                e = e.max(relative_error(a[c], dense.grad(which)?, GRADIENT_FLOOR));
            }
            Ok(e)
        })();
        match res {
            Ok(e) => worst = worst.max(e),
            Err(e) => return CheckOutcome::failed(NAME, DENSE_TOL, format!("draw {d}: {e}")),
        }
    }
    CheckOutcome::new(NAME, worst, DENSE_TOL, format!("{} draws", opts.draws))
}

/// Likelihood and gradient under different shard counts.
pub fn check_shard_invariance(opts: &VerifyOptions) -> CheckOutcome {
    const NAME: &str = "shard invariance";
    let mut worst = 0.0f64;
    for (d, p) in draws(opts, 0xE55, 200).iter().enumerate() {
        let res = (|| -> Result<f64> {
            let one = LocalOracle::with_shards(p.features.clone(), 1);
            let base_l = objective(&one, &p.dataset, &p.hyper)?;
            let base_g = analytic_gradient(&one, &p.dataset, &p.hyper)?;
            let mut e = 0.0f64;
            for shards in [2, 3, 7] {
                let o = LocalOracle::with_shards(p.features.clone(), shards);
                e = e.max(relative_error(objective(&o, &p.dataset, &p.hyper)?, base_l, 1.0));
                let g = analytic_gradient(&o, &p.dataset, &p.hyper)?;
                e = e.max(vector_relative_error(&g, &base_g, 1.0));
            }
            Ok(e)
        })();
        match res {
            Ok(e) => worst = worst.max(e),
            Err(e) => return CheckOutcome::failed(NAME, SHARD_TOL, format!("draw {d}: {e}")),
        }
    }
    CheckOutcome::new(NAME, worst, SHARD_TOL, format!("{} draws, p in 2, 3, 7", opts.draws))
}

/// All checks, in a fixed order.
pub fn run_suite(opts: &VerifyOptions) -> Vec<CheckOutcome> {
    vec![
        check_dense_equivalence(opts),
        check_identities(opts),
        check_finite_differences(opts),
        check_dense_gradient(opts),
        check_shard_invariance(opts),
    ]
}

/// Reference features for callers that want to reuse a draw.
pub fn sample_problem(seed: u64) -> RandomProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = random_shape(&mut rng, true);
    random_problem(shape, rng.random())
}
