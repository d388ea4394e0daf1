use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use vireid_bench::model_and_batch;
use vireid_core::evalkit::evaluate_model;
use vireid_core::losses::stage_objective;
use vireid_core::model::{backward, forward, Mode, Upstream};
use vireid_core::synthdata::benchmark_split;
use vireid_core::trainer::train;
use vireid_core::{Direction, OptimState, Stage, TrainConfig};

fn step(c: &mut Criterion) {
    let (params, b) = model_and_batch();
    let classes: Vec<usize> = b.labels().iter().map(|l| l % params.config.num_classes).collect();
    let cfg = TrainConfig::benchmark();
    c.bench_function("train_step_p8_k4", |bench| {
        let mut params = params.clone();
        let mut optim = OptimState::for_params(cfg.optim.clone(), &params);
        bench.iter(|| {
            let out = forward(&params, b.features(), Mode::Train).unwrap();
            let emb = b.with_features(out.embeddings.clone()).unwrap();
            let obj = stage_objective(Stage::Stage2, &emb, &out.logits, &classes, &cfg.loss).unwrap();
            let up = Upstream {
                embeddings: Some(&obj.grad_embeddings),
                bn_embeddings: None,
                logits: Some(&obj.grad_logits),
            };
            let grads = backward(&out.trace, &params, up).unwrap();
            optim.step(&mut params, &grads, 1e-3).unwrap();
            black_box(obj.value)
        })
    });
}

fn epoch_and_eval(c: &mut Criterion) {
    let (tr, te) = benchmark_split(0).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        stage1_epochs: 0,
        ..TrainConfig::benchmark()
    };
    let mut g = c.benchmark_group("benchmark_data");
    g.sample_size(20);
    g.bench_function("one_epoch", |bench| bench.iter(|| train(black_box(&tr), None, &cfg).unwrap()));
    let params = train(&tr, None, &cfg).unwrap().params;
    g.bench_function("evaluate", |bench| {
        bench.iter(|| evaluate_model(black_box(&params), &te, Direction::T2v).unwrap())
    });
    g.finish();
}

criterion_group!(benches, step, epoch_and_eval);
criterion_main!(benches);
