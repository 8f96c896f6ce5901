use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use gpgc_core::synth::{random_problem, ProblemShape};
use gpgc_core::{FeatureOracle, LocalOracle};
use nalgebra::DMatrix;

fn oracle_queries(c: &mut Criterion) {
    let k = 32;
    let mut group = c.benchmark_group("oracle");
    for n in [5_000usize, 20_000] {
        let p = random_problem(ProblemShape { n, k, n_groups: 10, n_scales: 1, weighted: false }, 7);
        let oracle = LocalOracle::new(p.features);
        let v: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let d: Vec<f64> = (0..n).map(|i| 1.0 + (i % 5) as f64).collect();
        let u: Vec<f64> = (0..k).map(|j| (j as f64 * 0.11).cos()).collect();
        let a = DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { 0.01 });
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("mat_vec", n), &n, |b, _| b.iter(|| oracle.mat_vec(&v).unwrap()));
        group.bench_with_input(BenchmarkId::new("mat_t_vec", n), &n, |b, _| b.iter(|| oracle.mat_t_vec(&u).unwrap()));
        group.bench_with_input(BenchmarkId::new("weighted_gram", n), &n, |b, _| {
            b.iter(|| oracle.weighted_gram(&d).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("diag_quadratic", n), &n, |b, _| {
            b.iter(|| oracle.diag_quadratic(&a).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, oracle_queries);
criterion_main!(benches);
