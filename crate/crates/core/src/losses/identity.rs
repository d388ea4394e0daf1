use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::LossOutput;

/// Mean softmax cross-entropy over rows. No label smoothing.
pub fn identity_loss(logits: &Matrix, labels: &[usize]) -> Result<LossOutput> {
    let n = logits.rows();
    if n == 0 || labels.len() != n {
        return Err(Error::dim(format!(
            "{n} logit rows but {} labels",
            labels.len()
        )));
    }
    let c = logits.cols();
    let mut grad = Matrix::zeros(n, c);
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Label(format!("label {y} out of range for {c} classes")));
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[y];
        let g = grad.row_mut(i);
        for (gj, v) in g.iter_mut().zip(row) {
            *gj = (v - lse).exp() / n as f64;
        }
        g[y] -= 1.0 / n as f64;
    }
    Ok(LossOutput {
        value: total / n as f64,
        grad,
    })
}
