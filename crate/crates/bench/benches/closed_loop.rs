use aggrefeed::controller::{network_rhs, Gains};
use aggrefeed::scenarios::{quadratic_benchmark, SurveillanceConfig};
use aggrefeed::sim::{integrate, SimConfig};
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn rhs(c: &mut Criterion) {
    let scenario = SurveillanceConfig::default().resolve().unwrap();
    let model = scenario.model().unwrap();
    let state = scenario.initial_state(&model).unwrap();
    let gains = Gains::default();
    c.bench_function("network_rhs/surveillance_n6", |b| {
        b.iter(|| network_rhs(&model, black_box(&state), &gains).unwrap())
    });
}

fn short_run(c: &mut Criterion) {
    let bench = quadratic_benchmark(6, 2, 0).unwrap();
    let model = bench.model().unwrap();
    let state = bench.initial_state(&model, 0).unwrap();
    let config = SimConfig {
        horizon: 5.0,
        sample_period: 1.0,
        ..Default::default()
    };
    let mut group = c.benchmark_group("integrate");
    group.sample_size(10);
    group.bench_function("quadratic_n6_t5", |b| {
        b.iter(|| integrate(&model, black_box(&state), &config).unwrap())
    });
    group.finish();
}

criterion_group!(benches, rhs, short_run);
criterion_main!(benches);
