//! Batch-hard triplet losses: global mining and per-modality mining, plus
//! the stage dispatch between them.

use crate::batch::{LabeledBatch, Stage};
use crate::error::{Error, Result};
use crate::linalg::{pairwise_distances, Matrix, Metric};

use super::{axpy_row, LossOutput};

/// Sum over anchors in `rows` of `[d(a, hardest pos) - d(a, hardest neg) + m]+`,
/// mining only among `rows`. Gradients are accumulated into `grad`.
fn batch_hard(
    feats: &Matrix,
    dist: &Matrix,
    labels: &[usize],
    rows: &[usize],
    margin: f64,
    grad: &mut Matrix,
) -> Result<f64> {
    let dim = feats.cols();
    let mut diff = vec![0.0; dim];
    let mut total = 0.0;
    for &a in rows {
        let mut pos: Option<(usize, f64)> = None;
        let mut neg: Option<(usize, f64)> = None;
        for &j in rows {
            if j == a {
                continue;
            }
            let d = dist.get(a, j);
            if labels[j] == labels[a] {
                if pos.is_none_or(|(_, best)| d > best) {
                    pos = Some((j, d));
                }
            } else if neg.is_none_or(|(_, best)| d < best) {
                neg = Some((j, d));
            }
        }
        let (p, dp) = pos.ok_or_else(|| {
            Error::Sampling(format!("identity {} has a single row in the mining set", labels[a]))
        })?;
        let (n, dn) = neg.ok_or_else(|| Error::Sampling("no negative identity in the mining set".into()))?;
        let z = dp - dn + margin;
        if z <= 0.0 {
            continue;
        }
        total += z;
        // d(a,p) pulls a toward p, d(a,n) pushes a away from n
        if dp > 0.0 {
            for ((d, x), y) in diff.iter_mut().zip(feats.row(a)).zip(feats.row(p)) {
                *d = (x - y) / dp;
            }
            axpy_row(grad, a, 1.0, &diff);
            axpy_row(grad, p, -1.0, &diff);
        }
        if dn > 0.0 {
            for ((d, x), y) in diff.iter_mut().zip(feats.row(a)).zip(feats.row(n)) {
                *d = (x - y) / dn;
            }
            axpy_row(grad, a, -1.0, &diff);
            axpy_row(grad, n, 1.0, &diff);
        }
    }
    Ok(total)
}

/// Hard triplet loss mined over the whole batch, ignoring modality.
pub fn hard_triplet_global(batch: &LabeledBatch, margin: f64) -> Result<LossOutput> {
    let feats = batch.features();
    let dist = pairwise_distances(feats, Metric::Euclidean)?;
    let rows: Vec<usize> = (0..batch.len()).collect();
    let mut grad = Matrix::zeros(feats.rows(), feats.cols());
    let value = batch_hard(feats, &dist, batch.labels(), &rows, margin, &mut grad)?;
    Ok(LossOutput { value, grad })
}

/// Sum of two hard triplet terms, each mining positives and negatives
/// only within one of the batch's modalities.
pub fn hard_triplet_intra(batch: &LabeledBatch, margin: f64) -> Result<LossOutput> {
    let feats = batch.features();
    let dist = pairwise_distances(feats, Metric::Euclidean)?;
    let mut grad = Matrix::zeros(feats.rows(), feats.cols());
    let mut value = 0.0;
    for tag in batch.modality_pair() {
        let rows = batch.rows_with(tag);
        value += batch_hard(feats, &dist, batch.labels(), &rows, margin, &mut grad)
            .map_err(|e| match e {
                Error::Sampling(m) => Error::Sampling(format!("{tag} rows: {m}")),
                other => other,
            })?;
    }
    Ok(LossOutput { value, grad })
}

/// Progressive hard triplet loss: within-modality mining on grayscale +
/// infrared batches, global mining on visible + infrared batches.
pub fn pht(batch: &LabeledBatch, stage: Stage, margin: f64) -> Result<LossOutput> {
    if !batch.matches_stage(stage) {
        let [a, b] = batch.modality_pair();
        return Err(Error::Stage(format!("{stage} expects {:?}, batch has {a}+{b}", stage.modalities())));
    }
    match stage {
        Stage::Stage1 => hard_triplet_intra(batch, margin),
        Stage::Stage2 => hard_triplet_global(batch, margin),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::ModalityTag::{Grayscale as G, Infrared as I, Visible as V};

    fn batch(rows: &[(f64, usize, crate::batch::ModalityTag)]) -> LabeledBatch {
        let f = Matrix::new(rows.len(), 1, rows.iter().map(|r| r.0).collect()).unwrap();
        LabeledBatch::new(f, rows.iter().map(|r| r.1).collect(), rows.iter().map(|r| r.2).collect()).unwrap()
    }

    #[test]
    fn separated_clusters_zero() {
        let b = batch(&[(0.0, 1, V), (0.0, 1, I), (1.0, 2, V), (1.0, 2, I)]);
        assert_eq!(hard_triplet_global(&b, 0.1).unwrap().value, 0.0);
    }

    #[test]
    fn collapsed_batch_pays_margin_per_anchor() {
        let b = batch(&[(0.3, 1, V), (0.3, 1, I), (0.3, 2, V), (0.3, 2, I)]);
        let out = hard_triplet_global(&b, 0.1).unwrap();
        assert!((out.value - 0.4).abs() < 1e-15);
        assert_eq!(out.grad.max_abs(), 0.0);
    }

    #[test]
    fn derived_global_example() {
        let b = batch(&[(0.0, 1, V), (0.5, 1, I), (0.6, 2, V), (1.0, 2, I)]);
        let out = hard_triplet_global(&b, 0.1).unwrap();
        assert!((out.value - 0.9).abs() < 1e-12);
    }

    #[test]
    fn intra_combines_modalities() {
        let b = batch(&[
            (0.0, 1, G),
            (0.5, 1, G),
            (0.6, 2, G),
            (1.0, 2, G),
            (0.0, 1, I),
            (0.0, 1, I),
            (5.0, 2, I),
            (5.0, 2, I),
        ]);
        assert!((hard_triplet_intra(&b, 0.1).unwrap().value - 0.9).abs() < 1e-12);
        assert!((pht(&b, Stage::Stage1, 0.1).unwrap().value - 0.9).abs() < 1e-12);
        assert!(matches!(pht(&b, Stage::Stage2, 0.1), Err(Error::Stage(_))));
    }

    #[test]
    fn intra_rejects_single_row_cells() {
        let b = batch(&[(0.0, 1, G), (0.0, 1, I), (1.0, 2, G), (1.0, 2, I)]);
        assert!(matches!(hard_triplet_intra(&b, 0.1), Err(Error::Sampling(_))));
    }

    #[test]
    fn global_needs_negatives() {
        let b = batch(&[(0.0, 1, V), (0.5, 1, I)]);
        assert!(matches!(hard_triplet_global(&b, 0.1), Err(Error::Sampling(_))));
    }

    #[test]
    fn ties_pick_lowest_index() {
        // anchor 0 has rows 1 and 2 as equally hard positives; row 1 wins,
        // so row 2 only collects the pushes of anchors 1 and 3.
        let b = batch(&[
            (0.0, 1, V),
            (1.0, 1, V),
            (-1.0, 1, I),
            (0.1, 1, I),
            (0.5, 2, V),
            (10.0, 2, V),
            (10.0, 2, I),
            (10.0, 2, I),
        ]);
        let out = hard_triplet_global(&b, 0.1).unwrap();
        assert!((out.grad.get(2, 0) + 2.0).abs() < 1e-12, "{}", out.grad.get(2, 0));
        assert!((out.grad.get(1, 0) - 5.0).abs() < 1e-12, "{}", out.grad.get(1, 0));
    }
}
