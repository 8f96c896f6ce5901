use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;
use gpgc_core::io::load_features;
use gpgc_core::model::fmt_real;
use gpgc_core::{build_cache, posterior_variance, LocalOracle, TrainedModel};

use crate::train::TrainManifest;

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Add the posterior variance as a third column; needs --with-train.
    #[arg(long)]
    variance: bool,
    /// The `<model>.train.json` manifest written by `train`.
    #[arg(long)]
    with_train: Option<PathBuf>,
}

pub fn run(args: PredictArgs) -> Result<ExitCode> {
    if args.variance && args.with_train.is_none() {
        bail!(
            "--variance needs the training set: pass --with-train <model>.train.json \
             (the model file alone only determines the mean)"
        );
    }
    let model = TrainedModel::load(&args.model)
        .with_context(|| format!("reading model {}", args.model.display()))?;
    let features = load_features(&args.features)?.features;
    if features.k() != model.k() {
        bail!(
            "feature dimension mismatch: {} has k = {}, the model expects k = {}",
            args.features.display(),
            features.k(),
            model.k()
        );
    }
    let cache = match (&args.with_train, args.variance) {
        (Some(manifest), true) => {
            let manifest: TrainManifest = serde_json::from_str(
                &std::fs::read_to_string(manifest)
                    .with_context(|| format!("reading {}", manifest.display()))?,
            )?;
            let data = manifest.load()?;
            if data.dataset.n_groups() != model.n_groups() || data.features.k() != model.k() {
                bail!("the training manifest does not describe this model's training set");
            }
            let oracle = LocalOracle::new(data.features);
            Some(build_cache(&oracle, &data.dataset, &model.hyper)?)
        }
        _ => None,
    };

    let mut out = BufWriter::new(
        std::fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?,
    );
    for i in 0..features.n_cols() {
        let phi = features.instance(i);
        let mean = model.mean(phi)?;
        let label = if mean < 0.0 { -1 } else { 1 };
        match &cache {
            Some(c) => writeln!(out, "{}\t{label}\t{}", fmt_real(mean), fmt_real(posterior_variance(c, phi)?))?,
            None => writeln!(out, "{}\t{label}", fmt_real(mean))?,
        }
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}
