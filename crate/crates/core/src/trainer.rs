//! The two-stage training loop, per-epoch logs and ablation runs.
//!
//! With the default `gray-to-rgb` schedule, epochs `[0, t)` train on
//! grayscale + infrared batches with the stage 1 objective and epochs
//! `[t, T)` on visible + infrared batches with the stage 2 objective. The
//! `rgb-to-gray` schedule swaps the order: visible first, grayscale after
//! epoch `t`.
//!
//! Randomness: a root stream seeded from `seed` is split into an
//! initialization stream and one stream per epoch, so an epoch's batches
//! do not depend on how many draws earlier epochs made.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::batch::{sample_batch, BatchSpec, Stage};
use crate::config::{self, parse_bool, parse_list, parse_value, resolve_key};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate_model, Direction, EvalReport};
use crate::linalg::RngStream;
use crate::losses::{stage_objective, LossConfig, LossTerms};
use crate::model::{backward, forward, Activation, Mode, ModelConfig, ModelParams, Upstream};
use crate::optim::{cosine_lr, AdamWConfig, OptimState};
use crate::synthdata::SynthDataset;
use crate::ModalityTag;

const TAG_INIT: u64 = 1;
const TAG_EPOCH: u64 = 0x1000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Schedule {
    #[default]
    GrayToRgb,
    RgbToGray,
}

impl Schedule {
    pub fn stage_at(self, epoch: usize, stage1_epochs: usize) -> Stage {
        let early = epoch < stage1_epochs;
        match (self, early) {
            (Schedule::GrayToRgb, true) | (Schedule::RgbToGray, false) => Stage::Stage1,
            _ => Stage::Stage2,
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::GrayToRgb => "gray-to-rgb",
            Schedule::RgbToGray => "rgb-to-gray",
        })
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gray-to-rgb" => Ok(Schedule::GrayToRgb),
            "rgb-to-gray" => Ok(Schedule::RgbToGray),
            _ => Err(Error::config(format!("unknown schedule {s:?} (gray-to-rgb or rgb-to-gray)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch: BatchSpec,
    pub hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
    pub activation: Activation,
    /// Total epochs `T`.
    pub epochs: usize,
    /// Epochs `t` before the stage switch.
    pub stage1_epochs: usize,
    pub schedule: Schedule,
    pub loss: LossConfig,
    pub optim: AdamWConfig,
    /// Anneal the learning rate every batch instead of once per epoch.
    pub lr_per_step: bool,
    /// Clear the AdamW moments at the stage switch.
    pub reset_optim_at_stage: bool,
    pub seed: u64,
    /// Evaluate every n epochs (0: only after the last epoch).
    pub eval_every: usize,
    pub direction: Direction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: BatchSpec::default(),
            hidden_dims: vec![64],
            embedding_dim: 32,
            activation: Activation::Relu,
            epochs: 40,
            stage1_epochs: 10,
            schedule: Schedule::GrayToRgb,
            loss: LossConfig::default(),
            optim: AdamWConfig::default(),
            lr_per_step: false,
            reset_optim_at_stage: false,
            seed: 0,
            eval_every: 0,
            direction: Direction::T2v,
        }
    }
}

impl TrainConfig {
    /// Recipe used on the bundled benchmark: three times the default
    /// epochs with the same `t/T` ratio, and a learning rate suited to a
    /// small encoder trained from scratch.
    pub fn benchmark() -> Self {
        Self {
            epochs: 120,
            stage1_epochs: 30,
            optim: AdamWConfig {
                base_lr: 1e-2,
                min_lr: 1e-4,
                ..AdamWConfig::default()
            },
            ..Self::default()
        }
    }

    pub const KEYS: &'static [&'static str] = &[
        "train.p",
        "train.k",
        "train.epochs",
        "train.stage1_epochs",
        "train.schedule",
        "train.seed",
        "train.eval_every",
        "train.lr_per_step",
        "train.reset_optim_at_stage",
        "model.hidden_dims",
        "model.embedding_dim",
        "model.activation",
        "loss.margin",
        "loss.lambda1",
        "loss.lambda2",
        "loss.msel_metric",
        "loss.dcl_mode",
        "loss.include_id_stage2",
        "optim.base_lr",
        "optim.min_lr",
        "optim.beta1",
        "optim.beta2",
        "optim.eps",
        "optim.weight_decay",
        "eval.direction",
    ];

    pub fn validate(&self) -> Result<()> {
        BatchSpec::new(self.batch.p, self.batch.k)?;
        if self.epochs == 0 {
            return Err(Error::config("train.epochs must be at least 1"));
        }
        if self.stage1_epochs > self.epochs {
            return Err(Error::config(format!(
                "train.stage1_epochs ({}) exceeds train.epochs ({})",
                self.stage1_epochs, self.epochs
            )));
        }
        if self.embedding_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::config("model widths must be positive"));
        }
        self.loss.validate()?;
        self.optim.validate()
    }

    /// Sets one dotted key. Unambiguous suffixes such as `stage1_epochs`
    /// are accepted.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = resolve_key(key, Self::KEYS)?;
        match key {
            "train.p" => self.batch.p = parse_value(key, value)?,
            "train.k" => self.batch.k = parse_value(key, value)?,
            "train.epochs" => self.epochs = parse_value(key, value)?,
            "train.stage1_epochs" => self.stage1_epochs = parse_value(key, value)?,
            "train.schedule" => self.schedule = value.parse()?,
            "train.seed" => self.seed = parse_value(key, value)?,
            "train.eval_every" => self.eval_every = parse_value(key, value)?,
            "train.lr_per_step" => self.lr_per_step = parse_bool(key, value)?,
            "train.reset_optim_at_stage" => self.reset_optim_at_stage = parse_bool(key, value)?,
            "model.hidden_dims" => self.hidden_dims = parse_list(key, value)?,
            "model.embedding_dim" => self.embedding_dim = parse_value(key, value)?,
            "model.activation" => self.activation = value.parse()?,
            "loss.margin" => self.loss.margin = parse_value(key, value)?,
            "loss.lambda1" => self.loss.lambda1 = parse_value(key, value)?,
            "loss.lambda2" => self.loss.lambda2 = parse_value(key, value)?,
            "loss.msel_metric" => self.loss.msel_metric = value.parse()?,
            "loss.dcl_mode" => self.loss.dcl_mode = value.parse()?,
            "loss.include_id_stage2" => self.loss.include_id_stage2 = parse_bool(key, value)?,
            "optim.base_lr" => self.optim.base_lr = parse_value(key, value)?,
            "optim.min_lr" => self.optim.min_lr = parse_value(key, value)?,
            "optim.beta1" => self.optim.beta1 = parse_value(key, value)?,
            "optim.beta2" => self.optim.beta2 = parse_value(key, value)?,
            "optim.eps" => self.optim.eps = parse_value(key, value)?,
            "optim.weight_decay" => self.optim.weight_decay = parse_value(key, value)?,
            "eval.direction" => self.direction = value.parse()?,
            _ => unreachable!("key list and match arms agree"),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let hidden = if self.hidden_dims.is_empty() {
            "-".to_string()
        } else {
            self.hidden_dims.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",")
        };
        let f = |x: f64| format!("{x:?}");
        [
            ("train.p", self.batch.p.to_string()),
            ("train.k", self.batch.k.to_string()),
            ("train.epochs", self.epochs.to_string()),
            ("train.stage1_epochs", self.stage1_epochs.to_string()),
            ("train.schedule", self.schedule.to_string()),
            ("train.seed", self.seed.to_string()),
            ("train.eval_every", self.eval_every.to_string()),
            ("train.lr_per_step", self.lr_per_step.to_string()),
            ("train.reset_optim_at_stage", self.reset_optim_at_stage.to_string()),
            ("model.hidden_dims", hidden),
            ("model.embedding_dim", self.embedding_dim.to_string()),
            ("model.activation", self.activation.to_string()),
            ("loss.margin", f(self.loss.margin)),
            ("loss.lambda1", f(self.loss.lambda1)),
            ("loss.lambda2", f(self.loss.lambda2)),
            ("loss.msel_metric", self.loss.msel_metric.to_string()),
            ("loss.dcl_mode", self.loss.dcl_mode.to_string()),
            ("loss.include_id_stage2", self.loss.include_id_stage2.to_string()),
            ("optim.base_lr", f(self.optim.base_lr)),
            ("optim.min_lr", f(self.optim.min_lr)),
            ("optim.beta1", f(self.optim.beta1)),
            ("optim.beta2", f(self.optim.beta2)),
            ("optim.eps", f(self.optim.eps)),
            ("optim.weight_decay", f(self.optim.weight_decay)),
            ("eval.direction", self.direction.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn to_text(&self) -> String {
        config::render(&self.to_pairs())
    }

    /// Defaults overridden by the entries of `text`. Unknown keys are
    /// errors; the message names the line.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for e in config::parse_entries(text)? {
            cfg.set(&e.key, &e.value).map_err(|err| Error::parse(e.line, err.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn model_config(&self, input_dim: usize, num_classes: usize) -> ModelConfig {
        let mut m = ModelConfig::new(input_dim, num_classes);
        m.hidden_dims = self.hidden_dims.clone();
        m.embedding_dim = self.embedding_dim;
        m.activation = self.activation;
        m
    }

    pub fn stage_at(&self, epoch: usize) -> Stage {
        self.schedule.stage_at(epoch, self.stage1_epochs)
    }
}

/// Batches per epoch: `ceil((visible + infrared samples) / (2PK))`.
pub fn batches_per_epoch(dataset: &SynthDataset, spec: BatchSpec) -> usize {
    let n = dataset.count(ModalityTag::Visible) + dataset.count(ModalityTag::Infrared);
    n.div_ceil(spec.rows()).max(1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: Stage,
    /// Learning rate of the epoch's first batch.
    pub lr: f64,
    pub batches: usize,
    /// Mean total objective.
    pub loss: f64,
    /// Mean of each active term.
    pub terms: LossTerms,
    pub eval: Option<EvalReport>,
}

pub const EPOCH_LOG_HEADER: &str = "epoch,stage,lr,batches,loss,id,intra,global,msel,dcl,rank1,map,minp";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        let (r1, map, minp) = match &self.eval {
            Some(e) => (Some(e.rank1()), Some(e.map), Some(e.minp)),
            None => (None, None, None),
        };
        format!(
            "{},{},{:?},{},{:?},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.stage,
            self.lr,
            self.batches,
            self.loss,
            opt(self.terms.id),
            opt(self.terms.intra),
            opt(self.terms.global),
            opt(self.terms.msel),
            opt(self.terms.dcl),
            opt(r1),
            opt(map),
            opt(minp),
        )
    }
}

pub fn epoch_logs_csv(logs: &[EpochLog]) -> String {
    let mut out = String::from(EPOCH_LOG_HEADER);
    out.push('\n');
    for l in logs {
        out.push_str(&l.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub optim: OptimState,
    pub logs: Vec<EpochLog>,
}

impl TrainOutput {
    pub fn final_eval(&self) -> Option<&EvalReport> {
        self.logs.last().and_then(|l| l.eval.as_ref())
    }
}

/// Called after every epoch with the log and the current state.
pub type EpochObserver<'a> = dyn FnMut(&EpochLog, &ModelParams, &OptimState) -> Result<()> + 'a;

pub fn train(train_set: &SynthDataset, eval_set: Option<&SynthDataset>, cfg: &TrainConfig) -> Result<TrainOutput> {
    train_with_observer(train_set, eval_set, cfg, &mut |_, _, _| Ok(()))
}

fn add_terms(acc: &mut LossTerms, t: &LossTerms) {
    fn add(a: &mut Option<f64>, b: Option<f64>) {
        if let Some(b) = b {
            *a = Some(a.unwrap_or(0.0) + b);
        }
    }
    add(&mut acc.id, t.id);
    add(&mut acc.intra, t.intra);
    add(&mut acc.global, t.global);
    add(&mut acc.msel, t.msel);
    add(&mut acc.dcl, t.dcl);
}

fn scale_terms(t: &mut LossTerms, s: f64) {
    for v in [&mut t.id, &mut t.intra, &mut t.global, &mut t.msel, &mut t.dcl]
        .into_iter()
        .flatten()
    {
        *v *= s;
    }
}

pub fn train_with_observer(
    train_set: &SynthDataset,
    eval_set: Option<&SynthDataset>,
    cfg: &TrainConfig,
    observer: &mut EpochObserver<'_>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let model_cfg = cfg.model_config(train_set.dim(), train_set.num_ids());
    model_cfg.validate()?;
    if let Some(ev) = eval_set {
        if ev.dim() != train_set.dim() {
            return Err(Error::dim(format!(
                "evaluation data has {} features, training data {}",
                ev.dim(),
                train_set.dim()
            )));
        }
    }

    let root = RngStream::new(cfg.seed);
    let mut params = ModelParams::init(model_cfg, &mut root.split(TAG_INIT))?;
    let mut optim = OptimState::for_params(cfg.optim.clone(), &params);
    let class_map = train_set.class_map();
    let nb = batches_per_epoch(train_set, cfg.batch);
    let total = cfg.epochs as f64;
    let mut logs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let stage = cfg.stage_at(epoch);
        if epoch > 0 && cfg.reset_optim_at_stage && stage != cfg.stage_at(epoch - 1) {
            optim.reset();
        }
        let mut rng = root.split(TAG_EPOCH + epoch as u64);
        let mut loss_sum = 0.0;
        let mut terms = LossTerms::default();
        let mut first_lr = f64::NAN;

        for b in 0..nb {
            let at = |e: Error| Error::Training {
                epoch,
                batch: b,
                source: Box::new(e),
            };
            let progress = if cfg.lr_per_step {
                epoch as f64 + b as f64 / nb as f64
            } else {
                epoch as f64
            };
            let lr = cosine_lr(progress, total, cfg.optim.base_lr, cfg.optim.min_lr).map_err(at)?;
            if b == 0 {
                first_lr = lr;
            }
            let mut step = || -> Result<(f64, LossTerms)> {
                let batch = sample_batch(train_set, cfg.batch, stage, &mut rng)?;
                let classes: Vec<usize> = batch.labels().iter().map(|id| class_map[id]).collect();
                let out = forward(&params, batch.features(), Mode::Train)?;
                let emb = batch.with_features(out.embeddings.clone())?;
                let obj = stage_objective(stage, &emb, &out.logits, &classes, &cfg.loss)?;
                if !obj.value.is_finite() {
                    return Err(Error::numeric(format!("objective is {}", obj.value)));
                }
                let grads = backward(
                    &out.trace,
                    &params,
                    Upstream {
                        embeddings: Some(&obj.grad_embeddings),
                        bn_embeddings: None,
                        logits: Some(&obj.grad_logits),
                    },
                )?;
                params.update_running_stats(&out.trace)?;
                optim.step(&mut params, &grads, lr)?;
                Ok((obj.value, obj.terms))
            };
            let (v, t) = step().map_err(at)?;
            loss_sum += v;
            add_terms(&mut terms, &t);
        }

        scale_terms(&mut terms, 1.0 / nb as f64);
        let last = epoch + 1 == cfg.epochs;
        let due = cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0;
        let eval = match eval_set {
            Some(ev) if last || due => Some(evaluate_model(&params, ev, cfg.direction).map_err(|e| {
                Error::Training {
                    epoch,
                    batch: nb,
                    source: Box::new(e),
                }
            })?),
            _ => None,
        };
        let log = EpochLog {
            epoch,
            stage,
            lr: first_lr,
            batches: nb,
            loss: loss_sum / nb as f64,
            terms,
            eval,
        };
        observer(&log, &params, &optim)?;
        logs.push(log);
    }
    Ok(TrainOutput { params, optim, logs })
}

/// A named set of config overrides.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Variant {
    pub name: String,
    pub overrides: Vec<(String, String)>,
}

impl Variant {
    pub fn new(name: impl Into<String>, overrides: &[(&str, &str)]) -> Self {
        Self {
            name: name.into(),
            overrides: overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn apply(&self, base: &TrainConfig) -> Result<TrainConfig> {
        let mut cfg = base.clone();
        for (k, v) in &self.overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Baseline variants of the modality study. Metric-loss weights are zeroed
/// so only the modality schedule differs.
pub fn modality_variants(base: &TrainConfig) -> Vec<Variant> {
    let all = base.epochs.to_string();
    let off = [("loss.lambda1", "0"), ("loss.lambda2", "0")];
    let with = |name: &str, extra: &[(&str, &str)]| {
        let mut o: Vec<(&str, &str)> = off.to_vec();
        o.extend_from_slice(extra);
        Variant::new(name, &o)
    };
    vec![
        with("rgb", &[("train.stage1_epochs", "0")]),
        with("gray", &[("train.stage1_epochs", &all)]),
        with("rgb-to-gray", &[("train.schedule", "rgb-to-gray")]),
        with("gray-to-rgb", &[("train.schedule", "gray-to-rgb")]),
    ]
}

/// Variants of the MSEL/DCL study on top of the progressive baseline.
pub fn loss_variants() -> Vec<Variant> {
    let l1 = ("loss.lambda1", "0.5");
    let l2 = ("loss.lambda2", "0.5");
    let no1 = ("loss.lambda1", "0");
    let no2 = ("loss.lambda2", "0");
    vec![
        Variant::new("base-pl", &[no1, no2]),
        Variant::new("msel-cosine", &[l1, no2, ("loss.msel_metric", "cosine")]),
        Variant::new("msel-euclid", &[l1, no2, ("loss.msel_metric", "euclid")]),
        Variant::new("dcl-hard", &[no1, l2, ("loss.dcl_mode", "hard")]),
        Variant::new("dcl-all", &[no1, l2, ("loss.dcl_mode", "all")]),
        Variant::new("dcl-dyn", &[no1, l2, ("loss.dcl_mode", "dyn")]),
        Variant::new(
            "msel-euclid+dcl-dyn",
            &[l1, l2, ("loss.msel_metric", "euclid"), ("loss.dcl_mode", "dyn")],
        ),
    ]
}

/// `lambda1` in 0.1, 0.3, .., 0.9 with everything else from the base.
pub fn lambda1_sweep() -> Vec<Variant> {
    ["0.1", "0.3", "0.5", "0.7", "0.9"]
        .iter()
        .map(|v| Variant::new(format!("lambda1={v}"), &[("loss.lambda1", v)]))
        .collect()
}

/// Final metrics of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub seed: u64,
    pub rank1: f64,
    pub map: f64,
    pub minp: f64,
    pub gap_ratio: f64,
    pub pos_cos_mean: f64,
}

impl RunMetrics {
    pub fn from_report(seed: u64, r: &EvalReport) -> Self {
        Self {
            seed,
            rank1: r.rank1(),
            map: r.map,
            minp: r.minp,
            gap_ratio: r.gap_ratio,
            pos_cos_mean: r.histogram.positive_mean,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub name: String,
    pub runs: Vec<RunMetrics>,
    /// Failure message, if the variant could not be run.
    pub error: Option<String>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl AblationRow {
    pub fn stat(&self, f: impl Fn(&RunMetrics) -> f64) -> (f64, f64) {
        mean_std(&self.runs.iter().map(f).collect::<Vec<_>>())
    }
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Comma-separated table of mean and std per metric, one row per variant.
    pub fn to_table(&self) -> String {
        let mut out = String::from(
            "variant,runs,rank1_mean,rank1_std,map_mean,map_std,minp_mean,minp_std,gap_ratio_mean,pos_cos_mean,error\n",
        );
        for r in &self.rows {
            let (r1, r1s) = r.stat(|m| m.rank1);
            let (map, maps) = r.stat(|m| m.map);
            let (minp, minps) = r.stat(|m| m.minp);
            let (gap, _) = r.stat(|m| m.gap_ratio);
            let (cos, _) = r.stat(|m| m.pos_cos_mean);
            let _ = writeln!(
                out,
                "{},{},{r1:.4},{r1s:.4},{map:.4},{maps:.4},{minp:.4},{minps:.4},{gap:.4},{cos:.4},{}",
                r.name,
                r.runs.len(),
                r.error.as_deref().unwrap_or("").replace(',', ";"),
            );
        }
        out
    }
}

/// Trains every variant (or just the base config when `variants` is
/// empty) once per seed. `data(seed)` supplies the training and held-out
/// sets; it is called once per seed and shared by all variants. A failing
/// variant records its error and the others continue.
pub fn ablate<F>(mut data: F, base: &TrainConfig, variants: &[Variant], seeds: &[u64]) -> Result<AblationReport>
where
    F: FnMut(u64) -> Result<(SynthDataset, SynthDataset)>,
{
    let owned;
    let variants = if variants.is_empty() {
        owned = [Variant::new("base", &[])];
        &owned[..]
    } else {
        variants
    };
    let configs: Vec<Result<TrainConfig>> = variants.iter().map(|v| v.apply(base)).collect();
    let mut rows: Vec<AblationRow> = variants
        .iter()
        .zip(&configs)
        .map(|(v, c)| AblationRow {
            name: v.name.clone(),
            runs: Vec::new(),
            error: c.as_ref().err().map(|e| e.to_string()),
        })
        .collect();

    for &seed in seeds {
        let (train_set, eval_set) = data(seed)?;
        for (row, cfg) in rows.iter_mut().zip(&configs) {
            let Ok(cfg) = cfg else { continue };
            if row.error.is_some() {
                continue;
            }
            let cfg = TrainConfig { seed, ..cfg.clone() };
            match train(&train_set, Some(&eval_set), &cfg) {
                Ok(out) => {
                    let report = out.final_eval().expect("evaluation set given");
                    row.runs.push(RunMetrics::from_report(seed, report));
                }
                Err(e) => row.error = Some(format!("seed {seed}: {e}")),
            }
        }
    }
    Ok(AblationReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate, GeneratorConfig};

    fn tiny_data(seed: u64) -> (SynthDataset, SynthDataset) {
        let g = GeneratorConfig {
            n_ids: 6,
            per_modality: 4,
            ..Default::default()
        };
        let mut rng = RngStream::new(seed);
        let train = generate(&g, &mut rng).unwrap();
        let eval = train.resample(3, &mut rng.split(9)).unwrap();
        (train, eval)
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            batch: BatchSpec::new(3, 2).unwrap(),
            hidden_dims: vec![12],
            embedding_dim: 6,
            epochs: 4,
            stage1_epochs: 1,
            ..Default::default()
        }
    }

    #[test]
    fn schedule_stage_boundaries() {
        let s = Schedule::GrayToRgb;
        assert_eq!(s.stage_at(0, 2), Stage::Stage1);
        assert_eq!(s.stage_at(1, 2), Stage::Stage1);
        assert_eq!(s.stage_at(2, 2), Stage::Stage2);
        assert_eq!(Schedule::RgbToGray.stage_at(0, 2), Stage::Stage2);
        assert_eq!(Schedule::RgbToGray.stage_at(2, 2), Stage::Stage1);
        assert_eq!(s.stage_at(0, 0), Stage::Stage2);
    }

    #[test]
    fn config_round_trip_and_overrides() {
        let mut cfg = TrainConfig::default();
        cfg.set("stage1_epochs", "3").unwrap();
        cfg.set("loss.dcl_mode", "hard").unwrap();
        cfg.set("model.hidden_dims", "16,8").unwrap();
        assert_eq!(cfg.stage1_epochs, 3);
        let back = TrainConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert!(matches!(cfg.set("bogus", "1"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("train.epochs", "x"), Err(Error::Config(_))));
        match TrainConfig::from_text("train.epochs = 3\nloss.margin = oops\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation() {
        let mut cfg = TrainConfig::default();
        cfg.stage1_epochs = 41;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.stage1_epochs = 40;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn epoch_length() {
        let (train, _) = tiny_data(0);
        assert_eq!(batches_per_epoch(&train, BatchSpec::new(3, 2).unwrap()), 4);
        assert_eq!(batches_per_epoch(&train, BatchSpec::new(2, 2).unwrap()), 6);
    }

    #[test]
    fn stage_terms_follow_the_schedule() {
        let (train_set, eval_set) = tiny_data(1);
        let out = train(&train_set, Some(&eval_set), &tiny_cfg()).unwrap();
        assert_eq!(out.logs.len(), 4);
        for l in &out.logs {
            assert!(l.loss.is_finite());
            match l.stage {
                Stage::Stage1 => {
                    assert!(l.terms.intra.is_some() && l.terms.id.is_some());
                    assert!(l.terms.msel.is_none() && l.terms.dcl.is_none() && l.terms.global.is_none());
                }
                Stage::Stage2 => {
                    assert!(l.terms.intra.is_none());
                    assert!(l.terms.global.is_some() && l.terms.msel.is_some() && l.terms.dcl.is_some());
                }
            }
        }
        assert_eq!(out.logs[0].stage, Stage::Stage1);
        assert_eq!(out.logs[1].stage, Stage::Stage2);
        assert!(out.logs[..3].iter().all(|l| l.eval.is_none()));
        assert!(out.final_eval().is_some());
    }

    #[test]
    fn deterministic_given_seed() {
        let (train_set, eval_set) = tiny_data(2);
        let a = train(&train_set, Some(&eval_set), &tiny_cfg()).unwrap();
        let b = train(&train_set, Some(&eval_set), &tiny_cfg()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.logs, b.logs);
        let c = train(&train_set, Some(&eval_set), &TrainConfig { seed: 5, ..tiny_cfg() }).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let (train_set, _) = tiny_data(3);
        let mut cfg = tiny_cfg();
        cfg.optim.base_lr = 0.0;
        cfg.optim.min_lr = 0.0;
        let out = train(&train_set, None, &cfg).unwrap();
        let init = ModelParams::init(
            cfg.model_config(train_set.dim(), train_set.num_ids()),
            &mut RngStream::new(cfg.seed).split(TAG_INIT),
        )
        .unwrap();
        for (a, b) in out.params.tensors().iter().zip(init.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn failures_name_epoch_and_batch() {
        let (train_set, _) = tiny_data(4);
        let mut cfg = tiny_cfg();
        cfg.batch = BatchSpec::new(7, 2).unwrap();
        match train(&train_set, None, &cfg) {
            Err(Error::Training { epoch, batch, source }) => {
                assert_eq!((epoch, batch), (0, 0));
                assert!(matches!(*source, Error::Sampling(_)));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn epoch_log_csv() {
        let (train_set, eval_set) = tiny_data(5);
        let out = train(&train_set, Some(&eval_set), &tiny_cfg()).unwrap();
        let csv = epoch_logs_csv(&out.logs);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        let cols = EPOCH_LOG_HEADER.split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == cols));
        assert!(lines[1].starts_with("0,stage1,"));
    }

    #[test]
    fn ablation_rows() {
        let base = tiny_cfg();
        let empty = ablate(|s| Ok(tiny_data(s)), &base, &[], &[0]).unwrap();
        assert_eq!(empty.rows.len(), 1);
        assert_eq!(empty.rows[0].runs.len(), 1);

        let mut variants = modality_variants(&base);
        variants.push(Variant::new("broken", &[("train.stage1_epochs", "99")]));
        let rep = ablate(|s| Ok(tiny_data(s)), &base, &variants, &[0, 1]).unwrap();
        assert_eq!(rep.rows.len(), 5);
        assert!(rep.rows[..4].iter().all(|r| r.runs.len() == 2 && r.error.is_none()));
        assert!(rep.row("broken").unwrap().error.is_some());
        assert_eq!(rep.to_table().lines().count(), 6);
        assert_eq!(lambda1_sweep().len(), 5);
        assert_eq!(loss_variants().len(), 7);
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
