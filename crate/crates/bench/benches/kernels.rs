use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lowrank_bench::{decaying_input, weights};
use lowrank_core::attention::{compress_on_vocabulary, mh_attention};
use lowrank_core::linalg::{singular_values, svd};

fn bench_svd(c: &mut Criterion) {
    let mut g = c.benchmark_group("svd");
    g.sample_size(20);
    for d in [32, 64, 128] {
        let a = decaying_input(d, 4 * d, 1);
        g.bench_with_input(BenchmarkId::new("values", d), &a, |b, a| b.iter(|| singular_values(black_box(a))));
        g.bench_with_input(BenchmarkId::new("full", d), &a, |b, a| b.iter(|| svd(black_box(a))));
    }
    g.finish();
}

fn bench_attention(c: &mut Criterion) {
    let mut g = c.benchmark_group("mh_attention");
    let u = decaying_input(128, 256, 2);
    for h in [1, 8, 32] {
        let w = weights(128, h, 3);
        g.bench_with_input(BenchmarkId::from_parameter(h), &w, |b, w| b.iter(|| mh_attention(black_box(&u), w)));
    }
    g.finish();
}

fn bench_compress(c: &mut Criterion) {
    let xi = decaying_input(128, 512, 4);
    let w = weights(128, 4, 5);
    c.bench_function("compress_on_vocabulary/d128", |b| b.iter(|| compress_on_vocabulary(&w, black_box(&xi), 16)));
}

criterion_group!(benches, bench_svd, bench_attention, bench_compress);
criterion_main!(benches);
