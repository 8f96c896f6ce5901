use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::Args;
use gpgc_core::io::save_features;
use gpgc_core::synth::{GroupedTask, GroupedTaskConfig, GroupedTaskGenerator};

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Feature dimension, including a trailing constant feature.
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 20)]
    groups: usize,
    /// Groups whose labels are all flipped.
    #[arg(long, default_value_t = 4)]
    corrupted: usize,
    /// Size of an additional clean test set written with a `test_` prefix.
    #[arg(long, default_value_t = 0)]
    test_n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn write_lines<T: std::fmt::Display>(path: PathBuf, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for x in items {
        writeln!(w, "{x}")?;
    }
    w.flush()?;
    Ok(())
}

fn write_task(dir: &std::path::Path, prefix: &str, task: &GroupedTask) -> Result<()> {
    save_features(&dir.join(format!("{prefix}features.gpcf")), &task.features, &[])?;
    let label = |y: &f64| if *y > 0.0 { "+1" } else { "-1" };
    write_lines(dir.join(format!("{prefix}labels.txt")), task.dataset.labels().iter().map(label))?;
    write_lines(dir.join(format!("{prefix}clean_labels.txt")), task.clean_labels.iter().map(label))?;
    write_lines(
        dir.join(format!("{prefix}groups.txt")),
        task.dataset.group_of().iter().map(|g| format!("{prefix}group{g:03}")),
    )?;
    Ok(())
}

pub fn run(args: SynthArgs) -> Result<ExitCode> {
    if args.k < 2 || args.groups == 0 || args.groups > args.n || args.corrupted > args.groups {
        bail!("need k >= 2, 1 <= groups <= n and corrupted <= groups");
    }
    std::fs::create_dir_all(&args.out_dir)?;
    let config = GroupedTaskConfig {
        n: args.n,
        k: args.k,
        n_groups: args.groups,
        n_corrupted: args.corrupted,
        ..GroupedTaskConfig::default()
    };
    let mut generator = GroupedTaskGenerator::new(config, args.seed);
    let train = generator.training_set();
    write_task(&args.out_dir, "", &train)?;
    write_lines(
        args.out_dir.join("corrupted.txt"),
        train
            .corrupted
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(|(g, _)| format!("group{g:03}")),
    )?;
    if args.test_n > 0 {
        let test = generator.test_set(args.test_n, args.groups.min(args.test_n));
        write_task(&args.out_dir, "test_", &test)?;
    }
    Ok(ExitCode::SUCCESS)
}
