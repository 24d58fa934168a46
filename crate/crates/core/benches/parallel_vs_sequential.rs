//! One worker against the default pool on the three hot paths.
//!
//! Build with `--no-default-features` to time the plain sequential loops.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use fpnet::contraction::{contraction_constant, PairBudget};
use fpnet::fixpoint::{find_fixed_points, GridSpec, IterationPolicy, DEFAULT_CLUSTER_RADIUS};
use fpnet::init::{init_network, DistributionSpec, ScaleRule, Seed};
use fpnet::net::ActivationKind;
use fpnet::par;
use fpnet::sweep::{cauchy_inverse_width, run_sweep, SweepConfig};

/// `(label, workers)`; `None` is the default pool.
fn variants() -> [(String, Option<usize>); 2] {
    [
        ("sequential".to_string(), Some(1)),
        (format!("parallel-{}", par::current_workers()), None),
    ]
}

fn run<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match workers {
        Some(n) => par::with_workers(n, f),
        None => f(),
    }
}

fn basins(c: &mut Criterion) {
    let net = init_network(
        &[2, 100, 100, 2],
        ActivationKind::Tanh,
        &cauchy_inverse_width(),
        Seed::derive(1, 6),
    )
    .unwrap();
    let spec = GridSpec::unit(0.05);
    let policy = IterationPolicy::default();
    let mut group = c.benchmark_group("basins");
    group.sample_size(10);
    for (label, workers) in variants() {
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            b.iter(|| run(workers, || find_fixed_points(black_box(&net), &spec, &policy, DEFAULT_CLUSTER_RADIUS).unwrap()))
        });
    }
    group.finish();
}

fn contraction(c: &mut Criterion) {
    let d = DistributionSpec::gauss(ScaleRule::PowerLaw { beta: 0.5 });
    let net = init_network(&[2, 400, 2], ActivationKind::Tanh, &d, Seed::new(2)).unwrap();
    let spec = GridSpec::unit(0.05);
    let mut group = c.benchmark_group("contraction");
    group.sample_size(10);
    for (label, workers) in variants() {
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            b.iter(|| run(workers, || contraction_constant(black_box(&net), &spec, PairBudget::All).unwrap()))
        });
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let mut cfg = SweepConfig::new(50, cauchy_inverse_width(), 8, 1);
    cfg.depths = vec![2, 3, 5];
    cfg.grid = GridSpec::unit(0.1);
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for (label, workers) in variants() {
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            b.iter(|| run(workers, || run_sweep(black_box(&cfg)).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, basins, contraction, sweep);
criterion_main!(benches);
