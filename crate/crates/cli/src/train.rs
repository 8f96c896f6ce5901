use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use gpgc_core::hyper::scale_groups_from_starts;
use gpgc_core::io::{load_dataset, load_scale_groups, load_weights, write_group_tokens, LoadedData};
use gpgc_core::net::DistributedOracle;
use gpgc_core::{
    balance_weights, train, ConvergedBy, FeatureOracle, LocalOracle, OptimizerConfig, TrainedModel,
    TrainingReport,
};
use serde::{Deserialize, Serialize};

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    groups: PathBuf,
    /// One scale-group index per feature; overrides the feature file header.
    #[arg(long)]
    scale_groups: Option<PathBuf>,
    /// Reweight the classes so both carry half of the total weight.
    #[arg(long, conflicts_with = "weights")]
    balance: bool,
    /// One positive weight per instance.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Comma-separated worker addresses; trains locally when absent.
    #[arg(long, value_delimiter = ',')]
    workers: Vec<String>,
    /// Send SHUTDOWN to the workers after training.
    #[arg(long, requires = "workers")]
    shutdown_workers: bool,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Stop when the log-space gradient max-norm falls below this.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 1e-9)]
    obj_tol: f64,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    init_eps: f64,
    /// Defaults to 1/sqrt(k).
    #[arg(long)]
    init_sigma: Option<f64>,
    /// Training report; defaults to `<out>.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Training inputs recorded next to the model so that `predict --variance`
/// can rebuild the posterior.
#[derive(Debug, Serialize, Deserialize)]
pub struct TrainManifest {
    pub features: PathBuf,
    pub labels: PathBuf,
    pub groups: PathBuf,
    pub weights: Option<PathBuf>,
    pub balance: bool,
}

impl TrainManifest {
    /// Reloads the training set with the weights used during training.
    pub fn load(&self) -> Result<LoadedData> {
        let mut data = load_dataset(&self.features, &self.labels, &self.groups)
            .context("loading training data")?;
        if let Some(w) = &self.weights {
            data.dataset.set_weights(load_weights(w)?)?;
        } else if self.balance {
            let w = balance_weights(&data.dataset)?;
            data.dataset.set_weights(w)?;
        }
        Ok(data)
    }
}

#[derive(Debug, Serialize)]
struct GroupEntry<'a> {
    token: &'a str,
    eps: f64,
    confidence: f64,
}

#[derive(Debug, Serialize)]
struct BalanceInfo {
    w_pos: f64,
    w_neg: f64,
    n_pos: usize,
    n_neg: usize,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    n_instances: usize,
    k: usize,
    n_groups: usize,
    n_scales: usize,
    workers: usize,
    seconds: f64,
    #[serde(flatten)]
    training: &'a TrainingReport,
    sigma: &'a [f64],
    balance: Option<BalanceInfo>,
    groups: Vec<GroupEntry<'a>>,
}

pub fn sidecar(model: &Path, suffix: &str) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

pub fn run(args: TrainArgs) -> Result<ExitCode> {
    let manifest = TrainManifest {
        features: absolute(&args.features)?,
        labels: absolute(&args.labels)?,
        groups: absolute(&args.groups)?,
        weights: args.weights.as_deref().map(absolute).transpose()?,
        balance: args.balance,
    };
    let data = manifest.load()?;
    let k = data.features.k();
    let scale_group_of = match &args.scale_groups {
        Some(p) => load_scale_groups(p, k)?,
        None => scale_groups_from_starts(&data.scale_starts, k)?,
    };
    let balance = args.balance.then(|| {
        let w = data.dataset.weights();
        let labels = data.dataset.labels();
        let pos = labels.iter().position(|&y| y > 0.0).unwrap();
        let neg = labels.iter().position(|&y| y < 0.0).unwrap();
        BalanceInfo {
            w_pos: w[pos],
            w_neg: w[neg],
            n_pos: labels.iter().filter(|&&y| y > 0.0).count(),
            n_neg: labels.iter().filter(|&&y| y < 0.0).count(),
        }
    });
    let config = OptimizerConfig {
        max_iters: args.max_iter,
        grad_tol: args.tol,
        obj_rel_tol: args.obj_tol,
        init_eps: args.init_eps,
        init_sigma: args.init_sigma,
        restarts: args.restarts,
        seed: args.seed,
        ..OptimizerConfig::default()
    };
    config.validate()?;

    let started = Instant::now();
    let (model, report) = if args.workers.is_empty() {
        let oracle = LocalOracle::new(data.features.clone());
        fit(&oracle, &data, &scale_group_of, &config)?
    } else {
        let oracle = DistributedOracle::connect(&args.workers, &data.features)?;
        let out = fit(&oracle, &data, &scale_group_of, &config);
        if args.shutdown_workers {
            oracle.shutdown()?;
        }
        out?
    };
    let seconds = started.elapsed().as_secs_f64();

    model
        .save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let mut tokens = Vec::new();
    write_group_tokens(&mut tokens, &data.groups)?;
    std::fs::write(sidecar(&args.out, ".groups"), tokens)?;
    std::fs::write(
        sidecar(&args.out, ".train.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;

    let full = Report {
        n_instances: data.dataset.n_instances(),
        k,
        n_groups: model.n_groups(),
        n_scales: model.hyper.n_scales(),
        workers: args.workers.len(),
        seconds,
        training: &report,
        sigma: &model.hyper.sigma,
        balance,
        groups: data
            .groups
            .tokens()
            .iter()
            .zip(&model.hyper.eps)
            .zip(&model.group_confidence)
            .map(|((t, &eps), &confidence)| GroupEntry {
                token: t,
                eps,
                confidence,
            })
            .collect(),
    };
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| sidecar(&args.out, ".report.json"));
    std::fs::write(&report_path, serde_json::to_string_pretty(&full)?)?;

    if report.line_search_failed {
        log::warn!("line search failed; the model holds the best iterate found");
    }
    eprintln!(
        "trained on {} instances in {} iterations ({:?}), log-likelihood {:.6}",
        data.dataset.n_instances(),
        report.iterations,
        report.converged_by,
        report.final_lml
    );
    if report.converged_by == ConvergedBy::MaxIters {
        log::warn!("iteration limit reached before convergence");
    }
    Ok(ExitCode::SUCCESS)
}

fn fit(
    oracle: &dyn FeatureOracle,
    data: &LoadedData,
    scale_group_of: &[usize],
    config: &OptimizerConfig,
) -> Result<(TrainedModel, TrainingReport)> {
    if data.dataset.n_instances() == 0 {
        bail!("the training set is empty");
    }
    Ok(train(oracle, &data.dataset, scale_group_of, config)?)
}
