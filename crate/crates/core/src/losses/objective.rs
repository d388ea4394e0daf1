//! Per-stage training objectives.
//!
//! Stage 1: `L1 = L_intra + L_id`.
//! Stage 2: `L2 = L_global + lambda1 * L_msel + lambda2 * L_dcl`, plus
//! `L_id` only when `include_id_stage2` is set. Terms with zero weight are
//! not evaluated.

use crate::batch::{LabeledBatch, Stage};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::{dcl, hard_triplet_global, hard_triplet_intra, identity_loss, msel, LossConfig};

/// Unweighted value of each evaluated term; `None` when not part of the
/// objective for this stage or configuration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub id: Option<f64>,
    pub intra: Option<f64>,
    pub global: Option<f64>,
    pub msel: Option<f64>,
    pub dcl: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveOutput {
    pub value: f64,
    pub terms: LossTerms,
    /// Gradient with respect to the (pre-BN) embeddings.
    pub grad_embeddings: Matrix,
    /// Gradient with respect to the classifier logits.
    pub grad_logits: Matrix,
}

fn check_stage(batch: &LabeledBatch, stage: Stage) -> Result<()> {
    if batch.matches_stage(stage) {
        Ok(())
    } else {
        let [a, b] = batch.modality_pair();
        Err(Error::Stage(format!("{stage} objective given a {a}+{b} batch")))
    }
}

pub fn stage1_objective(
    batch: &LabeledBatch,
    logits: &Matrix,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<ObjectiveOutput> {
    cfg.validate()?;
    check_stage(batch, Stage::Stage1)?;
    let intra = hard_triplet_intra(batch, cfg.margin)?;
    let id = identity_loss(logits, labels)?;
    Ok(ObjectiveOutput {
        value: intra.value + id.value,
        terms: LossTerms {
            id: Some(id.value),
            intra: Some(intra.value),
            ..Default::default()
        },
        grad_embeddings: intra.grad,
        grad_logits: id.grad,
    })
}

pub fn stage2_objective(
    batch: &LabeledBatch,
    logits: &Matrix,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<ObjectiveOutput> {
    cfg.validate()?;
    check_stage(batch, Stage::Stage2)?;
    let global = hard_triplet_global(batch, cfg.margin)?;
    let mut value = global.value;
    let mut terms = LossTerms {
        global: Some(global.value),
        ..Default::default()
    };
    let mut grad_embeddings = global.grad;

    if cfg.lambda1 > 0.0 {
        let m = msel(batch, cfg.msel_metric)?;
        value += cfg.lambda1 * m.value;
        grad_embeddings.add_scaled(&m.grad, cfg.lambda1)?;
        terms.msel = Some(m.value);
    }
    if cfg.lambda2 > 0.0 {
        let d = dcl(batch, cfg.dcl_mode)?;
        value += cfg.lambda2 * d.value;
        grad_embeddings.add_scaled(&d.grad, cfg.lambda2)?;
        terms.dcl = Some(d.value);
    }
    let grad_logits = if cfg.include_id_stage2 {
        let id = identity_loss(logits, labels)?;
        value += id.value;
        terms.id = Some(id.value);
        id.grad
    } else {
        Matrix::zeros(logits.rows(), logits.cols())
    };
    Ok(ObjectiveOutput {
        value,
        terms,
        grad_embeddings,
        grad_logits,
    })
}

/// Dispatches to the objective of `stage`.
pub fn stage_objective(
    stage: Stage,
    batch: &LabeledBatch,
    logits: &Matrix,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<ObjectiveOutput> {
    match stage {
        Stage::Stage1 => stage1_objective(batch, logits, labels, cfg),
        Stage::Stage2 => stage2_objective(batch, logits, labels, cfg),
    }
}
