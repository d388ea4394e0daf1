//! Finite-difference verification of every analytic gradient.
//!
//! Each component is checked on random instances in general position:
//! instances that put a hinge, a mining tie, a dynamic-margin boundary, a
//! ReLU or a zero distance within `1e-4` of a kink are redrawn, since
//! central differences are meaningless across a kink.
//!
//! The error of one entry is `|a - n| / max(|a|, |n|, 1e-2)`; the floor keeps
//! entries whose true gradient is zero from dividing rounding noise by
//! itself.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::batch::{LabeledBatch, Stage};
use crate::error::{Error, Result};
use crate::linalg::{euclid_unchecked, pairwise_distances, Matrix, Metric, RngStream};
use crate::losses::{
    dcl, hard_triplet_global, hard_triplet_intra, identity_loss, msel, stage_objective, DclMode, LossConfig,
};
use crate::model::{backward, forward, Mode, ModelConfig, ModelParams, Upstream};

/// Distance to the nearest kink below which an instance is redrawn.
pub const KINK_GAP: f64 = 1e-4;
pub const REL_FLOOR: f64 = 1e-2;
const MAX_DRAWS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Component {
    Id,
    Intra,
    Global,
    MselEuclid,
    MselCosine,
    DclHard,
    DclAll,
    DclDyn,
    Stage1,
    Stage2,
    Model,
}

impl Component {
    pub const ALL: [Component; 11] = [
        Component::Id,
        Component::Intra,
        Component::Global,
        Component::MselEuclid,
        Component::MselCosine,
        Component::DclHard,
        Component::DclAll,
        Component::DclDyn,
        Component::Stage1,
        Component::Stage2,
        Component::Model,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Id => "id",
            Component::Intra => "intra",
            Component::Global => "global",
            Component::MselEuclid => "msel-euclid",
            Component::MselCosine => "msel-cosine",
            Component::DclHard => "dcl-hard",
            Component::DclAll => "dcl-all",
            Component::DclDyn => "dcl-dyn",
            Component::Stage1 => "stage1",
            Component::Stage2 => "stage2",
            Component::Model => "model",
        }
    }

    fn stage(self) -> Stage {
        match self {
            Component::Intra | Component::Stage1 => Stage::Stage1,
            _ => Stage::Stage2,
        }
    }

    fn uses_msel(self) -> bool {
        matches!(
            self,
            Component::MselEuclid | Component::MselCosine | Component::Stage2 | Component::Model
        )
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::config(format!("unknown gradcheck component {s:?}")))
    }
}

/// Deliberate gradient bugs, used to show the harness catches them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Negates the MSEL gradient wherever MSEL contributes.
    MselSignFlip,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    /// Random instances per component.
    pub instances: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub components: Vec<Component>,
    pub fault: Option<Fault>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            seed: 0,
            step: 1e-6,
            tolerance: 1e-5,
            components: Component::ALL.to_vec(),
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentReport {
    pub component: Component,
    pub instances: usize,
    /// Largest entry error over all instances.
    pub max_rel_err: f64,
    /// Number of redrawn near-kink instances.
    pub redraws: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub components: Vec<ComponentReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.components.iter().all(|c| c.passed)
    }

    pub fn get(&self, c: Component) -> Option<&ComponentReport> {
        self.components.iter().find(|r| r.component == c)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<12} {:>9} {:>12} {:>8}  status\n", "component", "instances", "max_rel_err", "redraws");
        for c in &self.components {
            let _ = writeln!(
                out,
                "{:<12} {:>9} {:>12.3e} {:>8}  {}",
                c.component.name(),
                c.instances,
                c.max_rel_err,
                c.redraws,
                if c.passed { "ok" } else { "FAIL" }
            );
        }
        let _ = writeln!(
            out,
            "tolerance {:e}: {}",
            self.tolerance,
            if self.passed() { "all components pass" } else { "FAILED" }
        );
        out
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(x: &mut [f64], h: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let plus = f(x)?;
        x[i] = orig - h;
        let minus = f(x)?;
        x[i] = orig;
        g[i] = (plus - minus) / (2.0 * h);
    }
    Ok(g)
}

fn max_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| rel_err(*a, *n))
        .fold(0.0, f64::max)
}

/// Random balanced batch: P identities, K rows per identity per modality.
fn random_batch(rng: &mut RngStream, stage: Stage, p: usize, k: usize, dim: usize) -> Result<LabeledBatch> {
    let mut data = Vec::with_capacity(2 * p * k * dim);
    let mut labels = Vec::new();
    let mut tags = Vec::new();
    for tag in stage.modalities() {
        for id in 0..p {
            for _ in 0..k {
                data.extend((0..dim).map(|_| rng.gaussian()));
                labels.push(id);
                tags.push(tag);
            }
        }
    }
    LabeledBatch::new(Matrix::new(2 * p * k, dim, data)?, labels, tags)
}

fn min_pairwise(m: &Matrix) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..m.rows() {
        for j in i + 1..m.rows() {
            best = best.min(euclid_unchecked(m.row(i), m.row(j)));
        }
    }
    best
}

/// Hinge value, hardest-positive and hardest-negative ties all away from
/// kinks for every anchor of `rows`.
fn mining_clear(dist: &Matrix, labels: &[usize], rows: &[usize], margin: f64) -> bool {
    for &a in rows {
        let mut pos: Vec<f64> = Vec::new();
        let mut neg: Vec<f64> = Vec::new();
        for &j in rows {
            if j == a {
                continue;
            }
            if labels[j] == labels[a] {
                pos.push(dist.get(a, j));
            } else {
                neg.push(dist.get(a, j));
            }
        }
        pos.sort_by(|x, y| y.total_cmp(x));
        neg.sort_by(f64::total_cmp);
        if pos.len() > 1 && pos[0] - pos[1] < KINK_GAP {
            return false;
        }
        if neg.len() > 1 && neg[1] - neg[0] < KINK_GAP {
            return false;
        }
        if (pos[0] - neg[0] + margin).abs() < KINK_GAP {
            return false;
        }
    }
    true
}

fn triplet_clear(batch: &LabeledBatch, stage: Stage, margin: f64) -> bool {
    let dist = pairwise_distances(batch.features(), Metric::Euclidean).expect("finite batch");
    match stage {
        Stage::Stage1 => batch
            .modality_pair()
            .iter()
            .all(|&t| mining_clear(&dist, batch.labels(), &batch.rows_with(t), margin)),
        Stage::Stage2 => {
            let rows: Vec<usize> = (0..batch.len()).collect();
            mining_clear(&dist, batch.labels(), &rows, margin)
        }
    }
}

/// Center distances nonzero, dynamic-margin comparisons and the hardest
/// negative unambiguous.
fn dcl_clear(batch: &LabeledBatch, mode: DclMode) -> bool {
    let f = batch.features();
    for g in batch.groups() {
        let own: Vec<usize> = g.all_rows().collect();
        let mut c = vec![0.0; f.cols()];
        for &r in &own {
            for (cv, x) in c.iter_mut().zip(f.row(r)) {
                *cv += x / own.len() as f64;
            }
        }
        if own.iter().any(|&r| euclid_unchecked(f.row(r), &c) < KINK_GAP) {
            return false;
        }
        let mut neg: Vec<f64> = (0..batch.len())
            .filter(|&r| batch.labels()[r] != g.label)
            .map(|r| euclid_unchecked(f.row(r), &c))
            .collect();
        if neg.iter().any(|&d| d < KINK_GAP) {
            return false;
        }
        let d_neg = neg.iter().sum::<f64>() / neg.len() as f64;
        neg.sort_by(f64::total_cmp);
        match mode {
            DclMode::Dyn if neg.iter().any(|d| (d - d_neg).abs() < KINK_GAP) => return false,
            DclMode::Hard | DclMode::Dyn if neg.len() > 1 && neg[1] - neg[0] < KINK_GAP => return false,
            _ => {}
        }
    }
    true
}

fn relu_clear(pre: &[Matrix]) -> bool {
    // the last layer is linear
    pre[..pre.len() - 1]
        .iter()
        .all(|m| m.as_slice().iter().all(|v| v.abs() >= KINK_GAP))
}

struct Instance {
    err: f64,
    redraws: usize,
}

fn loss_config() -> LossConfig {
    LossConfig::default()
}

/// Value and gradient (w.r.t. embeddings, then logits if any) of a loss
/// component, with the optional fault applied.
fn evaluate(
    c: Component,
    batch: &LabeledBatch,
    logits: &Matrix,
    fault: Option<Fault>,
) -> Result<(f64, Vec<f64>, Option<Vec<f64>>)> {
    let cfg = loss_config();
    let flip = fault == Some(Fault::MselSignFlip) && c.uses_msel();
    let single = |out: crate::losses::LossOutput, neg: bool| {
        let mut g = out.grad.into_vec();
        if neg {
            g.iter_mut().for_each(|v| *v = -*v);
        }
        (out.value, g, None)
    };
    Ok(match c {
        Component::Id => {
            let out = identity_loss(logits, batch.labels())?;
            (out.value, Vec::new(), Some(out.grad.into_vec()))
        }
        Component::Intra => single(hard_triplet_intra(batch, cfg.margin)?, false),
        Component::Global => single(hard_triplet_global(batch, cfg.margin)?, false),
        Component::MselEuclid => single(msel(batch, Metric::Euclidean)?, flip),
        Component::MselCosine => single(msel(batch, Metric::Cosine)?, flip),
        Component::DclHard => single(dcl(batch, DclMode::Hard)?, false),
        Component::DclAll => single(dcl(batch, DclMode::All)?, false),
        Component::DclDyn => single(dcl(batch, DclMode::Dyn)?, false),
        Component::Stage1 | Component::Stage2 | Component::Model => {
            let cfg = LossConfig {
                include_id_stage2: true,
                ..cfg
            };
            let out = stage_objective(c.stage(), batch, logits, batch.labels(), &cfg)?;
            let mut g = out.grad_embeddings;
            if flip {
                g.add_scaled(&msel(batch, cfg.msel_metric)?.grad, -2.0 * cfg.lambda1)?;
            }
            (out.value, g.into_vec(), Some(out.grad_logits.into_vec()))
        }
    })
}

fn check_loss(c: Component, cfg: &GradcheckConfig, rng: &mut RngStream) -> Result<Instance> {
    let mut redraws = 0;
    let (batch, logits) = loop {
        let p = 2 + rng.index(2);
        let k = 2 + rng.index(2);
        let dim = 2 + rng.index(3);
        let batch = random_batch(rng, c.stage(), p, k, dim)?;
        let logits = Matrix::new(batch.len(), p, (0..batch.len() * p).map(|_| rng.gaussian()).collect())?;
        let clear = min_pairwise(batch.features()) >= KINK_GAP
            && match c {
                Component::Intra | Component::Stage1 | Component::Global => {
                    triplet_clear(&batch, c.stage(), loss_config().margin)
                }
                Component::DclHard => dcl_clear(&batch, DclMode::Hard),
                Component::DclAll => dcl_clear(&batch, DclMode::All),
                Component::DclDyn => dcl_clear(&batch, DclMode::Dyn),
                Component::Stage2 => {
                    triplet_clear(&batch, Stage::Stage2, loss_config().margin)
                        && dcl_clear(&batch, loss_config().dcl_mode)
                }
                _ => true,
            };
        if clear {
            break (batch, logits);
        }
        redraws += 1;
        if redraws > MAX_DRAWS {
            return Err(Error::numeric(format!("{c}: no general-position instance found")));
        }
    };

    let (_, ga, gl) = evaluate(c, &batch, &logits, cfg.fault)?;
    let mut err = 0.0;
    if !ga.is_empty() {
        let mut x = batch.features().as_slice().to_vec();
        let (rows, cols) = (batch.len(), batch.dim());
        let num = numeric_gradient(&mut x, cfg.step, |x| {
            let b = batch.with_features(Matrix::new(rows, cols, x.to_vec())?)?;
            Ok(evaluate(c, &b, &logits, None)?.0)
        })?;
        err = max_err(&ga, &num);
    }
    if let Some(gl) = gl {
        let mut x = logits.as_slice().to_vec();
        let num = numeric_gradient(&mut x, cfg.step, |x| {
            let l = Matrix::new(logits.rows(), logits.cols(), x.to_vec())?;
            Ok(evaluate(c, &batch, &l, None)?.0)
        })?;
        err = err.max(max_err(&gl, &num));
    }
    Ok(Instance { err, redraws })
}

/// Scalar used for the model check: the stage 2 objective (with identity
/// loss) on the pre-BN embeddings plus a fixed random projection of the
/// post-BN embeddings, so every parameter receives gradient.
fn model_objective(
    params: &ModelParams,
    inputs: &LabeledBatch,
    proj: &Matrix,
    fault: Option<Fault>,
) -> Result<(f64, crate::model::ForwardOutput, Vec<f64>, Vec<f64>)> {
    let out = forward(params, inputs.features(), Mode::Train)?;
    let emb = inputs.with_features(out.embeddings.clone())?;
    let (v, ge, gl) = evaluate(Component::Model, &emb, &out.logits, fault)?;
    let bn_term: f64 = out
        .bn_embeddings
        .as_slice()
        .iter()
        .zip(proj.as_slice())
        .map(|(a, b)| a * b)
        .sum();
    Ok((v + bn_term, out, ge, gl.expect("model objective has logits")))
}

fn check_model(cfg: &GradcheckConfig, rng: &mut RngStream) -> Result<Instance> {
    let mut redraws = 0;
    loop {
        let p = 2 + rng.index(2);
        let k = 2;
        let input_dim = 3 + rng.index(2);
        let inputs = random_batch(rng, Stage::Stage2, p, k, input_dim)?;
        let mut mc = ModelConfig::new(input_dim, p);
        mc.hidden_dims = vec![5];
        mc.embedding_dim = 3;
        let mut params = ModelParams::init(mc, rng)?;
        // non-trivial BN affine parameters
        for g in params.bn_gamma.iter_mut() {
            *g = 0.5 + rng.uniform();
        }
        for b in params.bn_beta.iter_mut() {
            *b = rng.gaussian() * 0.1;
        }
        let proj = Matrix::new(inputs.len(), 3, (0..inputs.len() * 3).map(|_| rng.gaussian()).collect())?;

        let (_, out, ge, gl) = model_objective(&params, &inputs, &proj, cfg.fault)?;
        let emb = inputs.with_features(out.embeddings.clone())?;
        let clear = relu_clear(out.trace.pre_activations())
            && min_pairwise(&out.embeddings) >= KINK_GAP
            && triplet_clear(&emb, Stage::Stage2, loss_config().margin)
            && dcl_clear(&emb, loss_config().dcl_mode);
        if !clear {
            redraws += 1;
            if redraws > MAX_DRAWS {
                return Err(Error::numeric("model: no general-position instance found"));
            }
            continue;
        }

        let ge = Matrix::new(out.embeddings.rows(), out.embeddings.cols(), ge)?;
        let gl = Matrix::new(out.logits.rows(), out.logits.cols(), gl)?;
        let grads = backward(
            &out.trace,
            &params,
            Upstream {
                embeddings: Some(&ge),
                bn_embeddings: Some(&proj),
                logits: Some(&gl),
            },
        )?;
        let analytic: Vec<f64> = grads.tensors().concat();

        let mut numeric = Vec::with_capacity(analytic.len());
        let n_tensors = params.tensors().len();
        for t in 0..n_tensors {
            let len = params.tensors()[t].len();
            for i in 0..len {
                let orig = params.tensors()[t][i];
                params.tensors_mut()[t][i] = orig + cfg.step;
                let plus = model_objective(&params, &inputs, &proj, None)?.0;
                params.tensors_mut()[t][i] = orig - cfg.step;
                let minus = model_objective(&params, &inputs, &proj, None)?.0;
                params.tensors_mut()[t][i] = orig;
                numeric.push((plus - minus) / (2.0 * cfg.step));
            }
        }
        return Ok(Instance {
            err: max_err(&analytic, &numeric),
            redraws,
        });
    }
}

pub fn run(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.instances == 0 {
        return Err(Error::config("gradcheck needs at least one instance per component"));
    }
    if !(cfg.step > 0.0 && cfg.tolerance > 0.0) {
        return Err(Error::config("step and tolerance must be positive"));
    }
    let root = RngStream::new(cfg.seed);
    let mut components = Vec::with_capacity(cfg.components.len());
    for (ci, &c) in Component::ALL.iter().enumerate() {
        if !cfg.components.contains(&c) {
            continue;
        }
        let mut max_rel_err: f64 = 0.0;
        let mut redraws = 0;
        for i in 0..cfg.instances {
            let mut rng = root.split(((ci as u64) << 32) | i as u64);
            let inst = if c == Component::Model {
                check_model(cfg, &mut rng)?
            } else {
                check_loss(c, cfg, &mut rng)?
            };
            max_rel_err = max_rel_err.max(inst.err);
            redraws += inst.redraws;
        }
        components.push(ComponentReport {
            component: c,
            instances: cfg.instances,
            max_rel_err,
            redraws,
            passed: max_rel_err <= cfg.tolerance,
        });
    }
    Ok(GradcheckReport {
        tolerance: cfg.tolerance,
        components,
    })
}
