use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use netsight_core::data::synthetic::coupled_sinusoids;
use netsight_core::graph::{exact_dtw, fast_dtw, SpatialAdjacency};
use netsight_core::pipeline::{PreparedData, TrainConfig, Trainer};

fn ring(n: usize) -> SpatialAdjacency {
    let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    SpatialAdjacency::from_edges(n, &edges).unwrap()
}

fn config() -> TrainConfig {
    TrainConfig {
        tau: 12,
        tau_out: 6,
        hidden: 32,
        d_ff: 64,
        gat_heads: 2,
        attention_heads: 2,
        batch_size: 32,
        ..TrainConfig::default()
    }
}

fn dtw(c: &mut Criterion) {
    let mut group = c.benchmark_group("dtw");
    for len in [128usize, 512] {
        let a: Vec<f64> = (0..len).map(|i| (i as f64 * 0.05).sin()).collect();
        let b: Vec<f64> = (0..len).map(|i| (i as f64 * 0.05 + 0.7).sin()).collect();
        group.bench_with_input(BenchmarkId::new("exact", len), &len, |bench, _| {
            bench.iter(|| exact_dtw(black_box(&a), black_box(&b)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("fast_r8", len), &len, |bench, _| {
            bench.iter(|| fast_dtw(black_box(&a), black_box(&b), 8).unwrap())
        });
    }
    group.finish();
}

fn model(c: &mut Criterion) {
    let cfg = config();
    let series = coupled_sinusoids(8, 300, 0.01, 1);
    let data = PreparedData::prepare(&series, &ring(8), &cfg).unwrap();
    let trainer = Trainer::new(&data, &cfg).unwrap();
    let net = trainer.model().clone();
    let (input, target) = data.window(data.train_starts()[0]);

    c.bench_function("forward_window", |b| b.iter(|| net.predict(black_box(&input)).unwrap()));
    c.bench_function("forward_backward_window", |b| {
        b.iter(|| net.loss_and_grad(black_box(&input), black_box(&target), cfg.huber_delta).unwrap())
    });

    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("epoch_8_nodes", |b| {
        b.iter_batched(
            || Trainer::new(&data, &cfg).unwrap(),
            |mut t| t.run_epoch().unwrap(),
            criterion::BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, dtw, model);
criterion_main!(benches);
