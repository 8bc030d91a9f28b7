use std::hint::black_box;

use atcn::attention::{temporal_attention, AttentionMode, AttentionParams};
use atcn::numerics::causal_dilated_conv1d;
use atcn::thresholds::{best_f1_threshold, default_z_grid, epsilon_threshold, pot_threshold, PotConfig};
use atcn::{Activation, Forecaster, ModelConfig};
use atcn_bench::{rng, scored_labels, tensor};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("causal_conv1d");
    let x = tensor(&[100, 32], 1);
    let f = tensor(&[4, 32, 32], 2);
    for d in [1, 2, 4] {
        g.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, &d| b.iter(|| causal_dilated_conv1d(black_box(&x), &f, d).unwrap()));
    }
    g.finish();
}

fn attention(c: &mut Criterion) {
    let mut g = c.benchmark_group("temporal_attention");
    let x = tensor(&[100, 25], 3);
    for mode in [AttentionMode::Dynamic, AttentionMode::Static] {
        let p = AttentionParams::init(25, mode, Activation::Sigmoid, &mut rng(4));
        g.bench_function(mode.as_str(), |b| b.iter(|| temporal_attention(black_box(&x), &p).unwrap()));
    }
    g.finish();
}

fn forecaster(c: &mut Criterion) {
    let config = ModelConfig::default();
    let w = config.window;
    let model = Forecaster::new(config, 25, 0).unwrap();
    let x = tensor(&[w, 25], 5);
    let y = tensor(&[25], 6);
    let mut g = c.benchmark_group("forecaster");
    g.sample_size(20);
    g.bench_function("predict", |b| b.iter(|| model.predict(black_box(&x)).unwrap()));
    g.bench_function("loss_and_grads", |b| b.iter(|| model.loss_and_grads(black_box(&x), &y, None).unwrap()));
    g.finish();
}

fn thresholds(c: &mut Criterion) {
    let (scores, labels) = scored_labels(10_000, 7);
    let mut g = c.benchmark_group("thresholds_10k");
    g.bench_function("grid", |b| b.iter(|| best_f1_threshold(black_box(&scores), &labels).unwrap()));
    g.bench_function("epsilon", |b| b.iter(|| epsilon_threshold(black_box(&scores), &default_z_grid()).unwrap()));
    g.bench_function("pot", |b| b.iter(|| pot_threshold(black_box(&scores), PotConfig::default()).unwrap()));
    g.finish();
}

criterion_group!(benches, conv, attention, forecaster, thresholds);
criterion_main!(benches);
