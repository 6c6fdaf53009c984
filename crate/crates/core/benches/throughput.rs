use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fprctl::confidence::{constant_search_with, ConstantSearchConfig};
use fprctl::harness::{run_experiment_with, ExperimentConfig};
use fprctl::par::Execution;

fn modes() -> [(&'static str, Execution); 2] {
    [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)]
}

fn seeds(c: &mut Criterion) {
    let mut cfg = ExperimentConfig::synthetic(0.2, 20_000, (0..8).collect()).unwrap();
    cfg.keep_rows = false;
    let mut group = c.benchmark_group("experiment_8_seeds_20k");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_experiment_with(exec, &cfg).unwrap())
        });
    }
    group.finish();
}

fn search(c: &mut Criterion) {
    let cfg = ConstantSearchConfig {
        c1_grid: vec![0.3, 0.5, 0.7],
        c2_grid: vec![0.75, 1.5, 3.0],
        deltas: vec![0.1, 0.2],
        trials: 20,
        horizon: 5_000,
        ..ConstantSearchConfig::default()
    };
    let mut group = c.benchmark_group("constant_search_18_cells");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| constant_search_with(exec, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, seeds, search);
criterion_main!(benches);
