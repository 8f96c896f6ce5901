use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;
use gpgc_core::io::load_group_tokens;
use gpgc_core::model::fmt_real;
use gpgc_core::TrainedModel;

use crate::train::sidecar;

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    /// Writes to standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    #[arg(long)]
    model: PathBuf,
    /// Percentage of groups to keep, in (0, 100].
    #[arg(long)]
    top_percent: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Number of groups kept at `gamma` percent: `ceil(gamma / 100 * g)`.
pub fn selected_count(gamma: f64, g: usize) -> usize {
    // Guards against products like 0.3 * 10 = 3.0000000000000004.
    let exact = gamma * g as f64 / 100.0;
    ((exact - 1e-9).ceil().max(0.0) as usize).min(g)
}

fn load(model_path: &Path) -> Result<(TrainedModel, Vec<String>)> {
    let model = TrainedModel::load(model_path)
        .with_context(|| format!("reading model {}", model_path.display()))?;
    let tokens_path = sidecar(model_path, ".groups");
    let tokens = if tokens_path.exists() {
        load_group_tokens(&tokens_path)?
    } else {
        log::warn!("{} not found; naming groups by index", tokens_path.display());
        (0..model.n_groups()).map(|g| g.to_string()).collect()
    };
    if tokens.len() != model.n_groups() {
        bail!(
            "{} lists {} groups, the model has {}",
            tokens_path.display(),
            tokens.len(),
            model.n_groups()
        );
    }
    Ok((model, tokens))
}

/// Manifest lines `token<TAB>confidence<TAB>0|1`, most confident first.
pub fn manifest(model: &TrainedModel, tokens: &[String], gamma: f64) -> String {
    let keep = selected_count(gamma, model.n_groups());
    let mut s = String::new();
    for (rank, g) in model.confidence_ranking().into_iter().enumerate() {
        let _ = writeln!(
            s,
            "{}\t{}\t{}",
            tokens[g],
            fmt_real(model.group_confidence[g]),
            u8::from(rank < keep)
        );
    }
    s
}

pub fn run_filter(args: FilterArgs) -> Result<ExitCode> {
    if !(args.top_percent > 0.0 && args.top_percent <= 100.0) {
        bail!("--top-percent must lie in (0, 100], got {}", args.top_percent);
    }
    let (model, tokens) = load(&args.model)?;
    std::fs::write(&args.out, manifest(&model, &tokens, args.top_percent))
        .with_context(|| format!("writing {}", args.out.display()))?;
    Ok(ExitCode::SUCCESS)
}

pub fn run_score(args: ScoreArgs) -> Result<ExitCode> {
    let (model, tokens) = load(&args.model)?;
    let mut s = String::new();
    for (rank, g) in model.confidence_ranking().into_iter().enumerate() {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}",
            rank + 1,
            tokens[g],
            fmt_real(model.group_confidence[g]),
            fmt_real(model.hyper.eps[g])
        );
    }
    match args.out {
        Some(p) => std::fs::write(&p, s).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{s}"),
    }
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gpgc_core::HyperParams;

    #[test]
    fn ceil_rule() {
        assert_eq!(selected_count(100.0, 7), 7);
        assert_eq!(selected_count(25.0, 10), 3);
        assert_eq!(selected_count(30.0, 10), 3);
        assert_eq!(selected_count(80.0, 20), 16);
        assert_eq!(selected_count(0.1, 10), 1);
        assert_eq!(selected_count(70.0, 10), 7);
    }

    #[test]
    fn manifest_orders_by_confidence_then_index() {
        let hyper = HyperParams::new(vec![0.5, 0.2, 0.5, 1.0], vec![1.0], vec![0]).unwrap();
        let model = TrainedModel::new(vec![0.0], hyper, 10, 0.0).unwrap();
        let tokens: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let text = manifest(&model, &tokens, 50.0);
        let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
        let order: Vec<&str> = rows.iter().map(|r| r[0]).collect();
        assert_eq!(order, ["b", "a", "c", "d"]);
        let selected: Vec<&str> = rows.iter().map(|r| r[2]).collect();
        assert_eq!(selected, ["1", "1", "0", "0"]);
        assert_eq!(text, manifest(&model, &tokens, 50.0));
    }
}
