//! PK mini-batches with modality tags, and the grayscale auxiliary modality.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngStream};
use crate::synthdata::{FeatureLayout, SynthDataset};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModalityTag {
    Visible,
    Grayscale,
    Infrared,
}

impl ModalityTag {
    pub const ALL: [ModalityTag; 3] = [
        ModalityTag::Visible,
        ModalityTag::Grayscale,
        ModalityTag::Infrared,
    ];

    pub fn file_token(self) -> &'static str {
        match self {
            ModalityTag::Visible => "vis",
            ModalityTag::Grayscale => "gray",
            ModalityTag::Infrared => "ir",
        }
    }

    pub fn from_file_token(s: &str) -> Option<Self> {
        match s {
            "vis" => Some(ModalityTag::Visible),
            "gray" => Some(ModalityTag::Grayscale),
            "ir" => Some(ModalityTag::Infrared),
            _ => None,
        }
    }
}

impl fmt::Display for ModalityTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_token())
    }
}

/// Training stage. Stage1 pairs grayscale with infrared, Stage2 pairs
/// visible with infrared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Stage1,
    Stage2,
}

impl Stage {
    /// The (non-infrared, infrared) modality pair of the stage.
    pub fn modalities(self) -> [ModalityTag; 2] {
        match self {
            Stage::Stage1 => [ModalityTag::Grayscale, ModalityTag::Infrared],
            Stage::Stage2 => [ModalityTag::Visible, ModalityTag::Infrared],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stage1" | "1" => Ok(Stage::Stage1),
            "stage2" | "2" => Ok(Stage::Stage2),
            other => Err(Error::config(format!("unknown stage `{other}`"))),
        }
    }
}

/// P identities per batch, K samples per identity per modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchSpec {
    pub p: usize,
    pub k: usize,
}

impl BatchSpec {
    pub fn new(p: usize, k: usize) -> Result<Self> {
        if p < 2 || k < 2 {
            return Err(Error::config(format!("batch spec needs P >= 2 and K >= 2, got P={p}, K={k}")));
        }
        Ok(Self { p, k })
    }

    /// Rows in a batch: two modalities of P*K each.
    pub fn rows(&self) -> usize {
        2 * self.p * self.k
    }
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self { p: 8, k: 4 }
    }
}

/// Rows of one identity, split by the batch's two modalities.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdentityGroup {
    pub label: usize,
    /// Row indices for `LabeledBatch::modality_pair()[0]` and `[1]`.
    pub rows: [Vec<usize>; 2],
}

impl IdentityGroup {
    pub fn all_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows[0].iter().chain(&self.rows[1]).copied()
    }
}

/// Feature or embedding rows with identity label and modality tag.
///
/// Construction checks the balanced PK structure: exactly two modalities,
/// and every label has the same number K of rows in each of them.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch {
    features: Matrix,
    labels: Vec<usize>,
    modalities: Vec<ModalityTag>,
    pair: [ModalityTag; 2],
    groups: Vec<IdentityGroup>,
    k: usize,
}

impl LabeledBatch {
    pub fn new(features: Matrix, labels: Vec<usize>, modalities: Vec<ModalityTag>) -> Result<Self> {
        let n = features.rows();
        if n == 0 {
            return Err(Error::Sampling("empty batch".into()));
        }
        if labels.len() != n || modalities.len() != n {
            return Err(Error::dim(format!(
                "{n} rows but {} labels and {} modality tags",
                labels.len(),
                modalities.len()
            )));
        }
        if !features.is_finite() {
            return Err(Error::numeric("non-finite batch row"));
        }
        let mut present: Vec<ModalityTag> = modalities.clone();
        present.sort();
        present.dedup();
        if present.len() != 2 {
            return Err(Error::Sampling(format!(
                "batch must contain exactly two modalities, found {}",
                present.len()
            )));
        }
        let pair = [present[0], present[1]];
        let mut by_label: BTreeMap<usize, [Vec<usize>; 2]> = BTreeMap::new();
        for (i, (&l, &m)) in labels.iter().zip(&modalities).enumerate() {
            let slot = usize::from(m == pair[1]);
            by_label.entry(l).or_default()[slot].push(i);
        }
        let k = by_label.values().next().map_or(0, |r| r[0].len());
        for (label, rows) in &by_label {
            if rows[0].len() != k || rows[1].len() != k {
                return Err(Error::Sampling(format!(
                    "identity {label} has {}+{} rows, expected {k} per modality",
                    rows[0].len(),
                    rows[1].len()
                )));
            }
        }
        let groups = by_label
            .into_iter()
            .map(|(label, rows)| IdentityGroup { label, rows })
            .collect();
        Ok(Self {
            features,
            labels,
            modalities,
            pair,
            groups,
            k,
        })
    }

    /// Same labels and tags over a new set of rows, e.g. the embeddings
    /// the model produced for this batch's features.
    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        if features.rows() != self.features.rows() {
            return Err(Error::dim(format!(
                "replacement has {} rows, batch has {}",
                features.rows(),
                self.features.rows()
            )));
        }
        if !features.is_finite() {
            return Err(Error::numeric("non-finite batch row"));
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn modalities(&self) -> &[ModalityTag] {
        &self.modalities
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// The two modalities present, in `ModalityTag` order.
    pub fn modality_pair(&self) -> [ModalityTag; 2] {
        self.pair
    }

    /// Identity groups in ascending label order.
    pub fn groups(&self) -> &[IdentityGroup] {
        &self.groups
    }

    /// Number of distinct identities (P).
    pub fn num_ids(&self) -> usize {
        self.groups.len()
    }

    /// Rows per identity per modality (K).
    pub fn k(&self) -> usize {
        self.k
    }

    /// Row indices carrying `tag`, ascending.
    pub fn rows_with(&self, tag: ModalityTag) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.modalities[i] == tag).collect()
    }

    pub fn matches_stage(&self, stage: Stage) -> bool {
        let mut want = stage.modalities();
        want.sort();
        want == self.pair
    }
}

/// Replaces every coordinate of the color block by the block mean; the
/// shared and modality blocks pass through untouched.
pub fn grayscale_of(visible: &[f64], layout: &FeatureLayout) -> Result<Vec<f64>> {
    if visible.len() != layout.total() {
        return Err(Error::dim(format!(
            "vector has {} dims, layout has {}",
            visible.len(),
            layout.total()
        )));
    }
    let mut out = visible.to_vec();
    let color = layout.color_range();
    let block = &visible[color.clone()];
    // A constant block is its own mean; skipping the division keeps the
    // operator exactly idempotent.
    if block.iter().all(|&v| v == block[0]) {
        return Ok(out);
    }
    let mean = block.iter().sum::<f64>() / layout.color_dims as f64;
    out[color].fill(mean);
    Ok(out)
}

/// Draws a PK batch for `stage`: P identities without replacement, then K
/// visible (or their grayscale views) and K infrared samples each.
pub fn sample_batch(
    dataset: &SynthDataset,
    spec: BatchSpec,
    stage: Stage,
    rng: &mut RngStream,
) -> Result<LabeledBatch> {
    sample_batch_with_sources(dataset, spec, stage, rng).map(|(b, _)| b)
}

/// Identities with at least `k` visible and `k` infrared samples. A batch
/// needs `P` of them.
pub fn eligible_ids(dataset: &SynthDataset, k: usize) -> Vec<usize> {
    dataset
        .ids()
        .filter(|&id| {
            let r = dataset.rows_of(id).expect("id from dataset");
            r.visible.len() >= k && r.infrared.len() >= k
        })
        .collect()
}

/// Like [`sample_batch`], also returning the dataset sample each row came
/// from. Grayscale rows report the visible sample they were derived from.
pub fn sample_batch_with_sources(
    dataset: &SynthDataset,
    spec: BatchSpec,
    stage: Stage,
    rng: &mut RngStream,
) -> Result<(LabeledBatch, Vec<usize>)> {
    let BatchSpec { p, k } = BatchSpec::new(spec.p, spec.k)?;
    let eligible = eligible_ids(dataset, k);
    if eligible.len() < p {
        return Err(Error::Sampling(format!(
            "need {p} identities with >= {k} visible and infrared samples, dataset has {}",
            eligible.len()
        )));
    }
    let chosen: Vec<usize> = rng
        .sample_indices(eligible.len(), p)
        .into_iter()
        .map(|i| eligible[i])
        .collect();

    let [first_tag, _] = stage.modalities();
    let n = 2 * p * k;
    let mut first = Vec::with_capacity(n / 2);
    let mut second = Vec::with_capacity(n / 2);
    for &id in &chosen {
        let rows = dataset.rows_of(id).expect("id from dataset");
        if stage == Stage::Stage1 && rows.grayscale.len() != rows.visible.len() {
            return Err(Error::Sampling(format!(
                "identity {id} has no grayscale views; stage1 needs them"
            )));
        }
        for j in rng.sample_indices(rows.visible.len(), k) {
            let feature_row = match stage {
                Stage::Stage1 => rows.grayscale[j],
                Stage::Stage2 => rows.visible[j],
            };
            first.push((id, feature_row, rows.visible[j]));
        }
        for j in rng.sample_indices(rows.infrared.len(), k) {
            second.push((id, rows.infrared[j], rows.infrared[j]));
        }
    }

    let mut data = Vec::with_capacity(n * dataset.dim());
    let mut labels = Vec::with_capacity(n);
    let mut tags = Vec::with_capacity(n);
    let mut sources = Vec::with_capacity(n);
    for (tag, rows) in [(first_tag, first), (ModalityTag::Infrared, second)] {
        for (id, feature_row, source) in rows {
            data.extend_from_slice(&dataset.sample(feature_row).features);
            labels.push(id);
            tags.push(tag);
            sources.push(source);
        }
    }
    let features = Matrix::new(n, dataset.dim(), data)?;
    Ok((LabeledBatch::new(features, labels, tags)?, sources))
}
