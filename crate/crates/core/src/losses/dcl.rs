//! Discriminative center loss.
//!
//! Each identity's center is the mean of its 2K rows. The loss is the
//! ratio of the summed mean sample-to-own-center distances to the summed
//! mean center-to-negative distances, where the negatives counted for a
//! center depend on [`DclMode`]. `Dyn` keeps negatives strictly closer than
//! the center's mean negative distance `d_neg`; if none qualify, the single
//! closest negative is used.
//!
//! The centers are functions of the embeddings, so every distance term
//! `||f_k - c_i||` also sends `-u / 2K` to each row of identity `i`.

use crate::batch::LabeledBatch;
use crate::error::{Error, Result};
use crate::linalg::{euclid_unchecked, Matrix};

use super::{axpy_row, DclMode, LossOutput, DENOM_EPS};

#[derive(Clone, Debug, PartialEq)]
pub struct CenterStats {
    /// One row per identity, in `LabeledBatch::groups()` order.
    pub centers: Matrix,
    /// Mean distance from each center to every row of other identities.
    pub dyn_margins: Vec<f64>,
}

pub fn compute_centers(batch: &LabeledBatch) -> Result<CenterStats> {
    let p = batch.num_ids();
    if p < 2 {
        return Err(Error::config(format!("center statistics need P >= 2 identities, got {p}")));
    }
    let feats = batch.features();
    let dim = feats.cols();
    let mut centers = Matrix::zeros(p, dim);
    for (i, g) in batch.groups().iter().enumerate() {
        let count = g.all_rows().count() as f64;
        let c = centers.row_mut(i);
        for r in g.all_rows() {
            for (cj, x) in c.iter_mut().zip(feats.row(r)) {
                *cj += x;
            }
        }
        c.iter_mut().for_each(|v| *v /= count);
    }
    let labels = batch.labels();
    let dyn_margins = batch
        .groups()
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let (sum, cnt) = (0..batch.len())
                .filter(|&r| labels[r] != g.label)
                .fold((0.0, 0usize), |(s, c), r| (s + euclid_unchecked(feats.row(r), centers.row(i)), c + 1));
            sum / cnt as f64
        })
        .collect();
    Ok(CenterStats {
        centers,
        dyn_margins,
    })
}

/// Adds `w * d||f_row - c_group||` to `grad`, where the center depends on
/// the rows of `group_rows`.
fn add_center_distance_grad(
    grad: &mut Matrix,
    feats: &Matrix,
    row: usize,
    center: &[f64],
    group_rows: &[usize],
    w: f64,
    dist: f64,
    unit: &mut [f64],
) {
    if dist == 0.0 {
        return;
    }
    for ((u, x), c) in unit.iter_mut().zip(feats.row(row)).zip(center) {
        *u = (x - c) / dist;
    }
    axpy_row(grad, row, w, unit);
    let share = -w / group_rows.len() as f64;
    for &j in group_rows {
        axpy_row(grad, j, share, unit);
    }
}

pub fn dcl(batch: &LabeledBatch, mode: DclMode) -> Result<LossOutput> {
    let stats = compute_centers(batch)?;
    let feats = batch.features();
    let labels = batch.labels();
    let dim = feats.cols();
    let n_rows = batch.len();

    let mut num = 0.0;
    let mut den = 0.0;
    let mut g_num = Matrix::zeros(n_rows, dim);
    let mut g_den = Matrix::zeros(n_rows, dim);
    let mut unit = vec![0.0; dim];

    for (i, g) in batch.groups().iter().enumerate() {
        let center = stats.centers.row(i);
        let own: Vec<usize> = g.all_rows().collect();

        let w_own = 1.0 / own.len() as f64;
        for &j in &own {
            let d = euclid_unchecked(feats.row(j), center);
            num += w_own * d;
            add_center_distance_grad(&mut g_num, feats, j, center, &own, w_own, d, &mut unit);
        }

        let negatives: Vec<(usize, f64)> = (0..n_rows)
            .filter(|&r| labels[r] != g.label)
            .map(|r| (r, euclid_unchecked(feats.row(r), center)))
            .collect();
        let closest = || {
            negatives
                .iter()
                .copied()
                .reduce(|best, cand| if cand.1 < best.1 { cand } else { best })
                .into_iter()
                .collect::<Vec<_>>()
        };
        let selected: Vec<(usize, f64)> = match mode {
            DclMode::All => negatives.clone(),
            DclMode::Hard => closest(),
            DclMode::Dyn => {
                let margin = stats.dyn_margins[i];
                let within: Vec<_> = negatives.iter().copied().filter(|&(_, d)| d < margin).collect();
                if within.is_empty() {
                    closest()
                } else {
                    within
                }
            }
        };
        let w_neg = 1.0 / selected.len() as f64;
        for (k, d) in selected {
            den += w_neg * d;
            add_center_distance_grad(&mut g_den, feats, k, center, &own, w_neg, d, &mut unit);
        }
    }

    if den < DENOM_EPS {
        return Err(Error::Degenerate(format!(
            "center-to-negative distances sum to {den:e}"
        )));
    }
    let value = num / den;
    let mut grad = g_num;
    grad.scale(1.0 / den);
    grad.add_scaled(&g_den, -num / (den * den))?;
    Ok(LossOutput { value, grad })
}
