//! Shared fixtures for the criterion benches.

use vireid_core::batch::sample_batch;
use vireid_core::synthdata::generate;
use vireid_core::{
    BatchSpec, FeatureLayout, GeneratorConfig, LabeledBatch, Matrix, ModelParams, RngStream, Stage, SynthDataset,
    TrainConfig,
};

/// A dataset with `ids` identities and `dim = 2 * shared` features.
pub fn dataset(ids: usize, shared: usize, seed: u64) -> SynthDataset {
    let cfg = GeneratorConfig {
        n_ids: ids,
        per_modality: 8,
        layout: FeatureLayout::new(shared, shared / 2, shared - shared / 2).expect("valid layout"),
        ..GeneratorConfig::default()
    };
    generate(&cfg, &mut RngStream::new(seed)).expect("valid generator")
}

/// A cross-modality batch of `P` identities with `K` samples per modality.
pub fn batch(p: usize, k: usize, dim: usize, stage: Stage) -> LabeledBatch {
    let ds = dataset(p.max(2), dim / 2, 1);
    let spec = BatchSpec::new(p, k).expect("valid batch spec");
    sample_batch(&ds, spec, stage, &mut RngStream::new(2)).expect("enough identities")
}

/// Random logits for `batch` over `classes` classes, with class labels.
pub fn logits(batch: &LabeledBatch, classes: usize) -> (Matrix, Vec<usize>) {
    let mut rng = RngStream::new(3);
    let data = (0..batch.len() * classes).map(|_| rng.gaussian()).collect();
    let m = Matrix::new(batch.len(), classes, data).expect("shape matches");
    let labels = batch.labels().iter().map(|l| l % classes).collect();
    (m, labels)
}

/// Model and batch sized like the benchmark recipe.
pub fn model_and_batch() -> (ModelParams, LabeledBatch) {
    let cfg = TrainConfig::benchmark();
    let b = batch(cfg.batch.p, cfg.batch.k, 16, Stage::Stage2);
    let params = ModelParams::init(cfg.model_config(16, cfg.batch.p), &mut RngStream::new(4)).expect("valid model");
    (params, b)
}
