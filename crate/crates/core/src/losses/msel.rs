//! Modality-shared enhancement loss.
//!
//! For each anchor, compare its mean distance to same-identity rows of its
//! own modality with its mean distance to same-identity rows of the other
//! modality:
//!
//! ```text
//! D_intra(a) = 1/(K-1) * sum_{j in own modality, j != a} D(a, j)
//! D_cross(a) = 1/K     * sum_{j in other modality}       D(a, j)
//! L = 1/(2PK) * sum_identities sum_{a in 2K rows} (D_intra(a) - D_cross(a))^2
//! ```
//!
//! Features present in only one modality inflate `D_cross` relative to
//! `D_intra`, so the penalty pushes them out of the embedding.

use crate::batch::LabeledBatch;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Metric};

use super::{axpy_row, LossOutput};

pub fn msel(batch: &LabeledBatch, metric: Metric) -> Result<LossOutput> {
    let k = batch.k();
    if k < 2 {
        return Err(Error::config(format!("msel needs K >= 2 rows per modality, got {k}")));
    }
    let feats = batch.features();
    let n = batch.len() as f64;
    let dim = feats.cols();
    let mut grad = Matrix::zeros(feats.rows(), dim);
    let mut ga = vec![0.0; dim];
    let mut gj = vec![0.0; dim];
    let mut total = 0.0;

    // (row, weight) pairs forming D_intra - D_cross for one anchor
    let mut terms: Vec<(usize, f64)> = Vec::with_capacity(2 * k);
    for group in batch.groups() {
        for side in 0..2 {
            let own = &group.rows[side];
            let other = &group.rows[1 - side];
            for &a in own {
                terms.clear();
                terms.extend(own.iter().filter(|&&j| j != a).map(|&j| (j, 1.0 / (k - 1) as f64)));
                terms.extend(other.iter().map(|&j| (j, -1.0 / k as f64)));

                let mut diff = 0.0;
                for &(j, w) in &terms {
                    diff += w * metric.distance_and_grad(feats.row(a), feats.row(j), &mut ga)?;
                }
                total += diff * diff;
                let coef = 2.0 * diff / n;
                if coef == 0.0 {
                    continue;
                }
                for &(j, w) in &terms {
                    metric.distance_and_grad(feats.row(a), feats.row(j), &mut ga)?;
                    metric.distance_and_grad(feats.row(j), feats.row(a), &mut gj)?;
                    axpy_row(&mut grad, a, coef * w, &ga);
                    axpy_row(&mut grad, j, coef * w, &gj);
                }
            }
        }
    }
    Ok(LossOutput {
        value: total / n,
        grad,
    })
}
