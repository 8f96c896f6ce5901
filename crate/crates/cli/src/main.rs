//! `gpgc`: train grouped-noise GP models, rank and filter groups by learned
//! label confidence, and serve feature shards to a distributed master.

mod filter;
mod predict;
mod synth;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "gpgc", version, about = "Gaussian-process label-confidence learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn per-group noise levels and feature scales, write a model.
    Train(train::TrainArgs),
    /// Posterior mean and sign label for every instance of a feature file.
    Predict(predict::PredictArgs),
    /// List groups from most to least confident.
    Score(filter::ScoreArgs),
    /// Select the top-percent most confident groups.
    Filter(filter::FilterArgs),
    /// Host one shard of the feature matrix for a distributed master.
    Worker(WorkerArgs),
    /// Check the low-rank solver against dense and finite-difference oracles.
    Verify(VerifyArgs),
    /// Write a synthetic grouped data set with some flipped groups.
    Synth(synth::SynthArgs),
}

#[derive(Args, Debug)]
struct WorkerArgs {
    /// Address to listen on, e.g. 0.0.0.0:7070.
    #[arg(long)]
    listen: String,
    /// Reject shards whose feature dimension differs.
    #[arg(long)]
    expected_k: Option<usize>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random problems per check.
    #[arg(long, default_value_t = 20)]
    draws: usize,
    /// Also write the results as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Deliberately corrupt the analytic gradient; the suite must fail.
    #[arg(long, hide = true)]
    perturb_gradient: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train::run(a),
        Command::Predict(a) => predict::run(a),
        Command::Score(a) => filter::run_score(a),
        Command::Filter(a) => filter::run_filter(a),
        Command::Worker(a) => run_worker(a),
        Command::Verify(a) => run_verify(a),
        Command::Synth(a) => synth::run(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run_worker(args: WorkerArgs) -> anyhow::Result<ExitCode> {
    use std::io::Write;
    let worker = gpgc_core::net::Worker::bind(args.listen.as_str(), args.expected_k)
        .map_err(|e| anyhow::anyhow!("cannot listen on {}: {e}", args.listen))?;
    println!("listening on {}", worker.local_addr()?);
    std::io::stdout().flush()?;
    worker.serve()?;
    Ok(ExitCode::SUCCESS)
}

fn run_verify(args: VerifyArgs) -> anyhow::Result<ExitCode> {
    use gpgc_core::verify::{run_suite, VerifyOptions};
    let opts = VerifyOptions {
        seed: args.seed,
        draws: args.draws,
        perturb_gradient: args.perturb_gradient,
    };
    let outcomes = run_suite(&opts);
    let width = outcomes.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &outcomes {
        println!(
            "{}  {:width$}  worst {:.3e}  tolerance {:.0e}  ({})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.worst_error,
            c.tolerance,
            c.detail,
        );
    }
    if let Some(path) = args.json {
        std::fs::write(path, serde_json::to_string_pretty(&outcomes)?)?;
    }
    let ok = outcomes.iter().all(|c| c.passed);
    println!("{}", if ok { "all checks passed" } else { "verification FAILED" });
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
