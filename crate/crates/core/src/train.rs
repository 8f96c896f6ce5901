//! Type-II maximum likelihood: maximizes the (reweighted) log marginal
//! likelihood over `rho = (ln eps_g, ln sigma_s)` with L-BFGS.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::GroupedDataset;
use crate::error::{Error, Result};
use crate::gp::{build_cache, grad_noise, grad_scales, reweighted_log_marginal, GpCache};
use crate::hyper::{scale_group_count, HyperParams};
use crate::lbfgs::{minimize, LbfgsConfig, Termination};
use crate::model::{sign_label, TrainedModel};
use crate::oracle::FeatureOracle;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Tolerance on the infinity norm of the log-space gradient.
    pub grad_tol: f64,
    pub obj_rel_tol: f64,
    /// Number of stored curvature pairs.
    pub memory: usize,
    pub init_eps: f64,
    /// Initial feature scale; `None` means `1 / sqrt(k)`.
    pub init_sigma: Option<f64>,
    /// Number of optimization runs; runs after the first start from a
    /// jittered initialization.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            grad_tol: 1e-5,
            obj_rel_tol: 1e-9,
            memory: 10,
            init_eps: 1.0,
            init_sigma: None,
            restarts: 1,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0 && self.obj_rel_tol > 0.0) {
            return Err(Error::Domain("tolerances must be positive".into()));
        }
        if self.memory == 0 {
            return Err(Error::Domain("L-BFGS memory must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Domain("need at least one optimization run".into()));
        }
        if !(self.init_eps > 0.0 && self.init_sigma.is_none_or(|s| s > 0.0)) {
            return Err(Error::Domain("initial hyperparameters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergedBy {
    Gradient,
    Objective,
    MaxIters,
}

impl From<Termination> for ConvergedBy {
    fn from(t: Termination) -> Self {
        match t {
            Termination::Gradient => Self::Gradient,
            Termination::Objective => Self::Objective,
            Termination::MaxIters => Self::MaxIters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub final_lml: f64,
    pub converged_by: ConvergedBy,
    /// Objective after initialization and after every accepted step of the
    /// selected run.
    pub lml_trace: Vec<f64>,
    pub line_search_failed: bool,
    /// Index of the run that produced the model.
    pub best_run: usize,
    pub runs: usize,
}

/// Sums per-instance (or per-feature) values into their groups.
pub fn tie_gradients(per_instance: &[f64], group_of: &[usize], n_groups: usize) -> Result<Vec<f64>> {
    if per_instance.len() != group_of.len() {
        return Err(Error::Dimension(format!(
            "{} values for {} group entries",
            per_instance.len(),
            group_of.len()
        )));
    }
    let mut out = vec![0.0; n_groups];
    for (&v, &g) in per_instance.iter().zip(group_of) {
        *out.get_mut(g).ok_or_else(|| {
            Error::Dimension(format!("group {g} out of range for {n_groups} groups"))
        })? += v;
    }
    Ok(out)
}

/// Sign predictions `sign(beta . phi)` with zero mapped to `+1`.
pub fn predict_labels<'a, I>(model: &TrainedModel, features: I) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    features
        .into_iter()
        .map(|phi| model.mean(phi).map(sign_label))
        .collect()
}

/// Negated objective in log space, reusing one cache across evaluations.
struct Objective<'a, O: ?Sized> {
    oracle: &'a O,
    dataset: &'a GroupedDataset,
    template: HyperParams,
    cache: Option<GpCache>,
    last_error: Option<Error>,
}

impl<O: FeatureOracle + ?Sized> Objective<'_, O> {
    fn hyper_at(&self, rho: &[f64]) -> Result<HyperParams> {
        let theta: Vec<f64> = rho.iter().map(|r| r.exp()).collect();
        self.template.with_values(&theta)
    }

    /// Returns `-L(theta)` and writes `-dL/drho`.
    fn eval(&mut self, rho: &[f64], grad: &mut [f64]) -> f64 {
        match self.try_eval(rho, grad) {
            Ok(f) => f,
            Err(e) => {
                log::debug!("objective evaluation failed: {e}");
                self.last_error = Some(e);
                f64::INFINITY
            }
        }
    }

    fn try_eval(&mut self, rho: &[f64], grad: &mut [f64]) -> Result<f64> {
        let hyper = self.hyper_at(rho)?;
        let cache = match self.cache.as_mut() {
            Some(c) => {
                c.rebuild(self.oracle, self.dataset, &hyper)?;
                c
            }
            None => self.cache.insert(build_cache(self.oracle, self.dataset, &hyper)?),
        };
        let lml = reweighted_log_marginal(cache, self.dataset)?;
        let g_eps = grad_noise(cache, &hyper, self.dataset)?;
        let g_sigma = grad_scales(cache, &hyper)?;
        let theta = hyper.eps.iter().chain(&hyper.sigma);
        for ((out, g), t) in grad.iter_mut().zip(g_eps.iter().chain(&g_sigma)).zip(theta) {
            *out = -g * t;
        }
        Ok(-lml)
    }
}

/// Trains from the default initialization `eps = init_eps`,
/// `sigma = init_sigma` (or `1 / sqrt(k)`).
pub fn train<O: FeatureOracle + ?Sized>(
    oracle: &O,
    dataset: &GroupedDataset,
    scale_group_of: &[usize],
    config: &OptimizerConfig,
) -> Result<(TrainedModel, TrainingReport)> {
    let k = oracle.n_features();
    if scale_group_of.len() != k {
        return Err(Error::Dimension(format!(
            "scale-group map covers {} features, oracle serves {k}",
            scale_group_of.len()
        )));
    }
    scale_group_count(scale_group_of)?;
    config.validate()?;
    let sigma = config.init_sigma.unwrap_or(1.0 / (k as f64).sqrt());
    let init = HyperParams::uniform(dataset.n_groups(), config.init_eps, scale_group_of.to_vec(), sigma)?;
    train_from(oracle, dataset, &init, config)
}

/// Trains starting from explicit hyperparameters.
pub fn train_from<O: FeatureOracle + ?Sized>(
    oracle: &O,
    dataset: &GroupedDataset,
    init: &HyperParams,
    config: &OptimizerConfig,
) -> Result<(TrainedModel, TrainingReport)> {
    config.validate()?;
    init.validate()?;
    let lbfgs = LbfgsConfig {
        max_iters: config.max_iters,
        grad_tol: config.grad_tol,
        obj_rel_tol: config.obj_rel_tol,
        memory: config.memory,
        ..LbfgsConfig::default()
    };
    let base: Vec<f64> = init.to_vec().iter().map(|t| t.ln()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut objective = Objective {
        oracle,
        dataset,
        template: init.clone(),
        cache: None,
        last_error: None,
    };

    let mut best: Option<(usize, crate::lbfgs::LbfgsOutcome)> = None;
    for run in 0..config.restarts {
        let start: Vec<f64> = if run == 0 {
            base.clone()
        } else {
            base.iter().map(|r| r + rng.random_range(-0.5..=0.5)).collect()
        };
        let outcome = minimize(|x, g| objective.eval(x, g), &start, &lbfgs);
        let Some(outcome) = outcome else {
            let reason = objective
                .last_error
                .take()
                .map_or_else(|| "objective is not finite".to_owned(), |e| e.to_string());
            if run == 0 {
                return Err(Error::Initialization(reason));
            }
            log::warn!("restart {run} skipped: {reason}");
            continue;
        };
        log::info!(
            "run {run}: {} iterations, lml {:.6}, {:?}",
            outcome.iterations,
            -outcome.f,
            outcome.termination
        );
        if best.as_ref().is_none_or(|(_, b)| outcome.f < b.f) {
            best = Some((run, outcome));
        }
    }
    let (best_run, outcome) = best.expect("first run either succeeds or returns early");
    if outcome.line_search_failed {
        log::warn!("line search failed to make progress; returning best iterate");
    }

    let hyper = objective.hyper_at(&outcome.x)?;
    let cache = build_cache(oracle, dataset, &hyper)?;
    let final_lml = reweighted_log_marginal(&cache, dataset)?;
    let model = TrainedModel::new(cache.beta(), hyper, dataset.n_instances(), final_lml)?;
    let report = TrainingReport {
        iterations: outcome.iterations,
        evaluations: outcome.evaluations,
        final_lml,
        converged_by: outcome.termination.into(),
        lml_trace: outcome.trace.iter().map(|f| -f).collect(),
        line_search_failed: outcome.line_search_failed,
        best_run,
        runs: config.restarts,
    };
    Ok((model, report))
}
