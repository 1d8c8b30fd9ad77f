//! Parallel vs sequential throughput of the Monte Carlo kernels.
//!
//! Both modes run the same fixed-chunk work split and produce bitwise
//! identical results; the bench measures the speedup alone.

use bsvie::exec::ExecMode;
use bsvie::grid::TimeGrid;
use bsvie::net::{NetConfig, NetworkParams};
use bsvie::problem::{example_1a, example_3, ProblemOverrides};
use bsvie::rollout::{rollout, FieldSource, RolloutOptions};
use bsvie::sde::{euler_decoupled, sample_increments, PathBatch};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn modes() -> Vec<(&'static str, ExecMode)> {
    vec![
        ("sequential", ExecMode::Sequential),
        ("parallel", ExecMode::Parallel),
    ]
}

fn bench_forward_simulation(c: &mut Criterion) {
    let problem = example_1a(&ProblemOverrides::default());
    let grid = TimeGrid::new(1.0, 20);
    let m = 1 << 12;
    let dw = sample_increments(1, 0, m, grid.n_steps(), problem.noise_dim, grid.h());
    let mut group = c.benchmark_group("euler_forward_4096x20");
    group.sample_size(10);
    for (name, mode) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| euler_decoupled(&problem, grid, &dw, m, mode).unwrap());
        });
    }
    group.finish();
}

fn bench_rollout_gradients(c: &mut Criterion) {
    let problem = example_1a(&ProblemOverrides::default());
    let grid = TimeGrid::new(1.0, 10);
    let m = 256;
    let batch = PathBatch::generate(&problem, grid, m, 3, 0, ExecMode::Parallel).unwrap();
    let params = NetworkParams::init(3, 5, 5, NetConfig::default());
    let mut group = c.benchmark_group("rollout_grad_256x10");
    group.sample_size(10);
    for (name, mode) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| {
                rollout(
                    &problem,
                    grid,
                    &batch,
                    FieldSource::Networks(&params),
                    RolloutOptions::training(mode),
                )
                .unwrap()
            });
        });
    }
    group.finish();
}

fn bench_coupled_rollout(c: &mut Criterion) {
    let problem = example_3(&ProblemOverrides::default());
    let grid = TimeGrid::new(1.0, 10);
    let m = 256;
    let batch = PathBatch::generate(&problem, grid, m, 3, 0, ExecMode::Parallel).unwrap();
    let params = NetworkParams::init(3, 5, 5, NetConfig::default());
    let mut group = c.benchmark_group("coupled_rollout_grad_256x10");
    group.sample_size(10);
    for (name, mode) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| {
                rollout(
                    &problem,
                    grid,
                    &batch,
                    FieldSource::Networks(&params),
                    RolloutOptions::training(mode),
                )
                .unwrap()
            });
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_forward_simulation,
    bench_rollout_gradients,
    bench_coupled_rollout
);
criterion_main!(benches);
