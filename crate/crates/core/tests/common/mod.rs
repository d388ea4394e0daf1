//! Brute-force reference implementations and random fixtures shared by the
//! integration tests. Nothing here calls into the library's loss or metric
//! code; every quantity is recomputed with explicit loops.

#![allow(dead_code)]

pub mod suites;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vireid_core::{DclMode, LabeledBatch, Matrix, Metric, ModalityTag};

/// A batch as plain rows, the form the oracles consume.
#[derive(Clone, Debug)]
pub struct Rows {
    pub x: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub tags: Vec<ModalityTag>,
}

impl Rows {
    pub fn to_batch(&self) -> LabeledBatch {
        let m = Matrix::from_rows(&self.x).unwrap();
        LabeledBatch::new(m, self.labels.clone(), self.tags.clone()).unwrap()
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s.sqrt()
}

pub fn cos_dist(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    1.0 - ab / (aa.sqrt() * bb.sqrt())
}

fn dist(a: &[f64], b: &[f64], metric: Metric) -> f64 {
    match metric {
        Metric::Euclidean => euclid(a, b),
        Metric::Cosine => cos_dist(a, b),
    }
}

/// Mean softmax cross-entropy.
pub fn identity(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.iter().zip(labels) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row {
            z += (v - mx).exp();
        }
        total += -(row[y] - mx - z.ln());
    }
    total / logits.len() as f64
}

/// Batch-hard triplet over the rows selected by `keep`, summed over anchors.
fn batch_hard(r: &Rows, margin: f64, keep: &dyn Fn(usize) -> bool) -> f64 {
    let mut total = 0.0;
    for a in 0..r.len() {
        if !keep(a) {
            continue;
        }
        let mut hardest_pos = f64::NEG_INFINITY;
        let mut hardest_neg = f64::INFINITY;
        for j in 0..r.len() {
            if j == a || !keep(j) {
                continue;
            }
            let d = euclid(&r.x[a], &r.x[j]);
            if r.labels[j] == r.labels[a] {
                hardest_pos = hardest_pos.max(d);
            } else {
                hardest_neg = hardest_neg.min(d);
            }
        }
        total += (hardest_pos - hardest_neg + margin).max(0.0);
    }
    total
}

pub fn global(r: &Rows, margin: f64) -> f64 {
    batch_hard(r, margin, &|_| true)
}

pub fn intra(r: &Rows, margin: f64) -> f64 {
    let mut tags = r.tags.clone();
    tags.sort();
    tags.dedup();
    tags.iter().map(|&t| batch_hard(r, margin, &|i| r.tags[i] == t)).sum()
}

pub fn msel(r: &Rows, metric: Metric) -> f64 {
    let mut total = 0.0;
    for a in 0..r.len() {
        let (mut same, mut ns, mut cross, mut nc) = (0.0, 0, 0.0, 0);
        for j in 0..r.len() {
            if j == a || r.labels[j] != r.labels[a] {
                continue;
            }
            let d = dist(&r.x[a], &r.x[j], metric);
            if r.tags[j] == r.tags[a] {
                same += d;
                ns += 1;
            } else {
                cross += d;
                nc += 1;
            }
        }
        let diff = same / ns as f64 - cross / nc as f64;
        total += diff * diff;
    }
    total / r.len() as f64
}

fn center(r: &Rows, label: usize) -> Vec<f64> {
    let dim = r.x[0].len();
    let mut c = vec![0.0; dim];
    let mut n = 0.0;
    for i in 0..r.len() {
        if r.labels[i] == label {
            for d in 0..dim {
                c[d] += r.x[i][d];
            }
            n += 1.0;
        }
    }
    c.iter().map(|v| v / n).collect()
}

pub fn dcl(r: &Rows, mode: DclMode) -> f64 {
    let mut labels = r.labels.clone();
    labels.sort();
    labels.dedup();
    let (mut num, mut den) = (0.0, 0.0);
    for &l in &labels {
        let c = center(r, l);
        let own: Vec<f64> = (0..r.len()).filter(|&i| r.labels[i] == l).map(|i| euclid(&r.x[i], &c)).collect();
        num += own.iter().sum::<f64>() / own.len() as f64;
        let neg: Vec<f64> = (0..r.len()).filter(|&i| r.labels[i] != l).map(|i| euclid(&r.x[i], &c)).collect();
        let mean_neg = neg.iter().sum::<f64>() / neg.len() as f64;
        let closest = neg.iter().cloned().fold(f64::INFINITY, f64::min);
        den += match mode {
            DclMode::Hard => closest,
            DclMode::All => mean_neg,
            DclMode::Dyn => {
                let near: Vec<f64> = neg.iter().cloned().filter(|&d| d < mean_neg).collect();
                if near.is_empty() {
                    closest
                } else {
                    near.iter().sum::<f64>() / near.len() as f64
                }
            }
        };
    }
    num / den
}

/// A random batch with `p` identities, `k` rows per modality, rows shuffled.
pub fn random_rows(rng: &mut ChaCha8Rng, p: usize, k: usize, dim: usize, pair: [ModalityTag; 2]) -> Rows {
    let mut rows = Vec::new();
    for id in 0..p {
        let label = 10 * id + rng.random_range(0..10);
        for &t in &pair {
            for _ in 0..k {
                let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
                rows.push((x, label, t));
            }
        }
    }
    for i in (1..rows.len()).rev() {
        rows.swap(i, rng.random_range(0..=i));
    }
    Rows {
        x: rows.iter().map(|r| r.0.clone()).collect(),
        labels: rows.iter().map(|r| r.1).collect(),
        tags: rows.iter().map(|r| r.2).collect(),
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const VIS_IR: [ModalityTag; 2] = [ModalityTag::Visible, ModalityTag::Infrared];
pub const GRAY_IR: [ModalityTag; 2] = [ModalityTag::Grayscale, ModalityTag::Infrared];

/// Per-query ranks (1-based) of every relevant gallery item, found by
/// counting the items ahead of it: strictly closer, or equally close with a
/// lower gallery index. Queries with no relevant item are omitted.
pub fn relevant_ranks(q: &[Vec<f64>], qids: &[usize], g: &[Vec<f64>], gids: &[usize]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for (qi, qrow) in q.iter().enumerate() {
        let d: Vec<f64> = g.iter().map(|grow| euclid(qrow, grow)).collect();
        let mut ranks = Vec::new();
        for gi in 0..g.len() {
            if gids[gi] != qids[qi] {
                continue;
            }
            let ahead = (0..g.len()).filter(|&h| d[h] < d[gi] || (d[h] == d[gi] && h < gi)).count();
            ranks.push(ahead + 1);
        }
        if !ranks.is_empty() {
            ranks.sort();
            out.push(ranks);
        }
    }
    out
}

pub fn cmc_oracle(ranks: &[Vec<usize>], max_k: usize) -> Vec<f64> {
    (1..=max_k)
        .map(|k| ranks.iter().filter(|r| r[0] <= k).count() as f64 / ranks.len() as f64)
        .collect()
}

pub fn ap_oracle(ranks: &[usize]) -> f64 {
    ranks.iter().enumerate().map(|(i, &r)| (i + 1) as f64 / r as f64).sum::<f64>() / ranks.len() as f64
}

pub fn inp_oracle(ranks: &[usize]) -> f64 {
    ranks.len() as f64 / *ranks.last().unwrap() as f64
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}
