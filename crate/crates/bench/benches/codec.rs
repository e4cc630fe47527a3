use criterion::{criterion_group, criterion_main, Criterion};
use elbrp_bench::{sample_data, sample_rreq};
use elbrp_core::{decode, encode};
use std::hint::black_box;

fn codec(c: &mut Criterion) {
    for (name, packet) in [("rreq", sample_rreq()), ("data", sample_data())] {
        let bytes = encode(&packet).unwrap();
        c.bench_function(&format!("encode_{name}"), |b| b.iter(|| encode(black_box(&packet)).unwrap()));
        c.bench_function(&format!("decode_{name}"), |b| b.iter(|| decode(black_box(&bytes)).unwrap()));
    }
}

criterion_group!(benches, codec);
criterion_main!(benches);
