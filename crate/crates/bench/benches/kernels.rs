use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use phat_bench::{features, logits, model};
use phat_core::numerics::Graph;
use phat_core::pna::kernels::{modulate_kernel, offset_logits_kernel, Side};
use phat_core::pna::{DistanceMode, ModulationIndex};

fn offset_logits(c: &mut Criterion) {
    let mut group = c.benchmark_group("offset_logits");
    for p in [12, 24, 48, 96] {
        let q = features(p, 2, 4, 1);
        let k = features(p, 2, 4, 2);
        group.bench_with_input(BenchmarkId::from_parameter(p), &p, |b, _| {
            b.iter(|| offset_logits_kernel(black_box(&q), black_box(&k), 0.5).unwrap())
        });
    }
    group.finish();
}

fn modulate(c: &mut Criterion) {
    let mut group = c.benchmark_group("modulate");
    for p in [12, 24, 48, 96] {
        let x = logits(p, 2, 3);
        let index = ModulationIndex::new(p, DistanceMode::Periodic).unwrap();
        group.bench_with_input(BenchmarkId::new("closer", p), &p, |b, _| {
            b.iter(|| modulate_kernel(black_box(&x), &index, Side::Closer).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("farther", p), &p, |b, _| {
            b.iter(|| modulate_kernel(black_box(&x), &index, Side::Farther).unwrap())
        });
    }
    group.finish();
}

fn model_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("model");
    group.sample_size(20);
    for (t, l) in [(96, 48), (192, 96)] {
        let (m, x, y) = model(t, l, 8);
        group.bench_function(BenchmarkId::new("forward", format!("{t}-{l}")), |b| {
            b.iter(|| m.forward(black_box(&x)).unwrap())
        });
        group.bench_function(
            BenchmarkId::new("forward_backward", format!("{t}-{l}")),
            |b| {
                b.iter(|| {
                    let mut g = Graph::new();
                    let tr = m.forward_graph(&mut g, black_box(&x)).unwrap();
                    let loss = g.mse(tr.output, y.clone()).unwrap();
                    g.backward(loss).unwrap()
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, offset_logits, modulate, model_step);
criterion_main!(benches);
