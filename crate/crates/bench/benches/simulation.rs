use criterion::{criterion_group, criterion_main, Criterion};
use elbrp_bench::short_scenario;
use elbrp_core::{run_cell, ProtocolKind};
use std::hint::black_box;

fn simulation(c: &mut Criterion) {
    let cfg = short_scenario(30.0);
    let mut g = c.benchmark_group("cell_30s");
    g.sample_size(10);
    for p in [ProtocolKind::Elbrp, ProtocolKind::Load] {
        g.bench_function(p.as_str(), |b| b.iter(|| run_cell(black_box(&cfg), p, 1).unwrap().metrics));
    }
    g.finish();
}

criterion_group!(benches, simulation);
criterion_main!(benches);
