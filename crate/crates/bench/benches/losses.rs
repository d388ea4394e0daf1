use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use vireid_bench::{batch, logits};
use vireid_core::linalg::pairwise_distances;
use vireid_core::losses::{dcl, hard_triplet_global, hard_triplet_intra, identity_loss, msel, stage_objective};
use vireid_core::{DclMode, LossConfig, Metric, Stage};

fn distances(c: &mut Criterion) {
    let mut g = c.benchmark_group("pairwise_distances");
    for (p, k) in [(4, 4), (8, 4), (16, 8)] {
        let b = batch(p, k, 64, Stage::Stage2);
        for metric in [Metric::Euclidean, Metric::Cosine] {
            g.bench_with_input(BenchmarkId::new(format!("{metric}"), b.len()), &b, |bench, b| {
                bench.iter(|| pairwise_distances(black_box(b.features()), metric).unwrap())
            });
        }
    }
    g.finish();
}

fn losses(c: &mut Criterion) {
    let mut g = c.benchmark_group("losses_p8_k4_d32");
    let b = batch(8, 4, 32, Stage::Stage2);
    let (lg, labels) = logits(&b, 16);
    g.bench_function("id", |bench| bench.iter(|| identity_loss(black_box(&lg), &labels).unwrap()));
    g.bench_function("intra", |bench| bench.iter(|| hard_triplet_intra(black_box(&b), 0.1).unwrap()));
    g.bench_function("global", |bench| bench.iter(|| hard_triplet_global(black_box(&b), 0.1).unwrap()));
    g.bench_function("msel_euclid", |bench| bench.iter(|| msel(black_box(&b), Metric::Euclidean).unwrap()));
    g.bench_function("msel_cosine", |bench| bench.iter(|| msel(black_box(&b), Metric::Cosine).unwrap()));
    for mode in [DclMode::Hard, DclMode::All, DclMode::Dyn] {
        g.bench_function(format!("dcl_{mode}"), |bench| bench.iter(|| dcl(black_box(&b), mode).unwrap()));
    }
    let cfg = LossConfig::default();
    g.bench_function("stage2_objective", |bench| {
        bench.iter(|| stage_objective(Stage::Stage2, black_box(&b), &lg, &labels, &cfg).unwrap())
    });
    g.finish();
}

criterion_group!(benches, distances, losses);
criterion_main!(benches);
