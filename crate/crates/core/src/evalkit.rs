//! Retrieval evaluation: ranking, CMC, mAP, mINP, similarity histograms
//! and the modality-gap ratio.
//!
//! Ranking sorts the gallery by ascending distance with ties broken by
//! gallery index. Queries without any relevant gallery item are dropped and
//! counted. mINP follows the usual definition: for each query,
//! `INP = |relevant| / rank of the last relevant item`.

use std::fmt::Write as _;

use crate::batch::ModalityTag;
use crate::error::{Error, Result};
use crate::linalg::{cosine_distance, euclid_unchecked, Matrix, Metric};
use crate::model::{extract_test_features, ModelParams};
use crate::synthdata::SynthDataset;

/// Ranked gallery for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryRanking {
    pub query: usize,
    /// Gallery indices, best match first.
    pub order: Vec<usize>,
    /// `relevant[r]` tells whether `order[r]` shares the query identity.
    pub relevant: Vec<bool>,
}

impl QueryRanking {
    pub fn num_relevant(&self) -> usize {
        self.relevant.iter().filter(|&&r| r).count()
    }

    /// 1-based rank of the first relevant item.
    pub fn first_hit(&self) -> Option<usize> {
        self.relevant.iter().position(|&r| r).map(|p| p + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingResult {
    pub queries: Vec<QueryRanking>,
    pub query_ids: Vec<usize>,
    pub gallery_ids: Vec<usize>,
    pub query_modality: Option<ModalityTag>,
    pub gallery_modality: Option<ModalityTag>,
    /// Queries dropped for having no relevant gallery item.
    pub dropped: usize,
}

impl RankingResult {
    /// Builds a result from precomputed rankings, e.g. for testing metrics.
    pub fn from_relevance(rows: Vec<Vec<bool>>) -> Result<Self> {
        let mut queries = Vec::with_capacity(rows.len());
        let mut dropped = 0;
        for (q, rel) in rows.into_iter().enumerate() {
            if !rel.iter().any(|&r| r) {
                dropped += 1;
                continue;
            }
            queries.push(QueryRanking {
                query: q,
                order: (0..rel.len()).collect(),
                relevant: rel,
            });
        }
        Ok(Self {
            queries,
            query_ids: Vec::new(),
            gallery_ids: Vec::new(),
            query_modality: None,
            gallery_modality: None,
            dropped,
        })
    }
}

pub fn rank(
    query_feats: &Matrix,
    gallery_feats: &Matrix,
    query_ids: &[usize],
    gallery_ids: &[usize],
    metric: Metric,
) -> Result<RankingResult> {
    if query_feats.rows() == 0 || gallery_feats.rows() == 0 {
        return Err(Error::dim("query and gallery sets must be nonempty"));
    }
    if query_feats.cols() != gallery_feats.cols() {
        return Err(Error::dim(format!(
            "query dim {} vs gallery dim {}",
            query_feats.cols(),
            gallery_feats.cols()
        )));
    }
    if query_ids.len() != query_feats.rows() || gallery_ids.len() != gallery_feats.rows() {
        return Err(Error::dim("identity labels must match the number of rows"));
    }
    let mut queries = Vec::with_capacity(query_feats.rows());
    let mut dropped = 0;
    for q in 0..query_feats.rows() {
        let qrow = query_feats.row(q);
        let dists = gallery_feats
            .iter_rows()
            .map(|g| metric.distance(qrow, g))
            .collect::<Result<Vec<f64>>>()?;
        let mut order: Vec<usize> = (0..gallery_feats.rows()).collect();
        // stable sort keeps index order among equal distances
        order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]));
        let relevant: Vec<bool> = order.iter().map(|&g| gallery_ids[g] == query_ids[q]).collect();
        if !relevant.iter().any(|&r| r) {
            dropped += 1;
            continue;
        }
        queries.push(QueryRanking {
            query: q,
            order,
            relevant,
        });
    }
    Ok(RankingResult {
        queries,
        query_ids: query_ids.to_vec(),
        gallery_ids: gallery_ids.to_vec(),
        query_modality: None,
        gallery_modality: None,
        dropped,
    })
}

/// `cmc[k-1]` is the fraction of queries whose first relevant item is at
/// rank `<= k`.
pub fn cmc(result: &RankingResult, max_k: usize) -> Vec<f64> {
    let mut curve = vec![0.0; max_k];
    if result.queries.is_empty() {
        return curve;
    }
    for q in &result.queries {
        if let Some(hit) = q.first_hit() {
            for c in curve.iter_mut().skip(hit - 1) {
                *c += 1.0;
            }
        }
    }
    let n = result.queries.len() as f64;
    curve.iter_mut().for_each(|c| *c /= n);
    curve
}

pub fn average_precision(q: &QueryRanking) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, &rel) in q.relevant.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

pub fn mean_ap(result: &RankingResult) -> f64 {
    if result.queries.is_empty() {
        return 0.0;
    }
    result.queries.iter().map(average_precision).sum::<f64>() / result.queries.len() as f64
}

pub fn inverse_negative_penalty(q: &QueryRanking) -> f64 {
    match q.relevant.iter().rposition(|&r| r) {
        Some(last) => q.num_relevant() as f64 / (last + 1) as f64,
        None => 0.0,
    }
}

pub fn minp(result: &RankingResult) -> f64 {
    if result.queries.is_empty() {
        return 0.0;
    }
    result.queries.iter().map(inverse_negative_penalty).sum::<f64>() / result.queries.len() as f64
}

/// Histograms over cosine similarity in `[-1, 1]` of cross-modality
/// pairs, split into positives (same identity) and negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityHistogram {
    /// `bins + 1` edges from -1 to 1.
    pub edges: Vec<f64>,
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
    pub positive_mean: f64,
    pub negative_mean: f64,
}

fn bin_of(sim: f64, bins: usize) -> usize {
    let t = ((sim + 1.0) / 2.0 * bins as f64).floor();
    (t.max(0.0) as usize).min(bins - 1)
}

pub fn similarity_histogram(
    feats: &Matrix,
    ids: &[usize],
    tags: &[ModalityTag],
    bins: usize,
) -> Result<SimilarityHistogram> {
    let n = feats.rows();
    if n < 2 {
        return Err(Error::dim("similarity histogram needs at least two samples"));
    }
    if bins < 2 {
        return Err(Error::config("similarity histogram needs at least two bins"));
    }
    if ids.len() != n || tags.len() != n {
        return Err(Error::dim("labels and tags must match the number of rows"));
    }
    let mut positive = vec![0; bins];
    let mut negative = vec![0; bins];
    let (mut psum, mut nsum) = (0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            if tags[i] == tags[j] {
                continue;
            }
            let sim = 1.0 - cosine_distance(feats.row(i), feats.row(j))?;
            let b = bin_of(sim, bins);
            if ids[i] == ids[j] {
                positive[b] += 1;
                psum += sim;
            } else {
                negative[b] += 1;
                nsum += sim;
            }
        }
    }
    let np = positive.iter().sum::<usize>();
    let nn = negative.iter().sum::<usize>();
    Ok(SimilarityHistogram {
        edges: (0..=bins).map(|b| -1.0 + 2.0 * b as f64 / bins as f64).collect(),
        positive,
        negative,
        positive_mean: if np > 0 { psum / np as f64 } else { f64::NAN },
        negative_mean: if nn > 0 { nsum / nn as f64 } else { f64::NAN },
    })
}

/// Mean Euclidean distance of cross-modality positive pairs divided by
/// the mean of intra-modality positive pairs.
pub fn modality_gap_ratio(feats: &Matrix, ids: &[usize], tags: &[ModalityTag]) -> Result<f64> {
    let n = feats.rows();
    if ids.len() != n || tags.len() != n {
        return Err(Error::dim("labels and tags must match the number of rows"));
    }
    let (mut cross, mut nc, mut intra, mut ni) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            if ids[i] != ids[j] {
                continue;
            }
            let d = euclid_unchecked(feats.row(i), feats.row(j));
            if tags[i] == tags[j] {
                intra += d;
                ni += 1;
            } else {
                cross += d;
                nc += 1;
            }
        }
    }
    if nc == 0 || ni == 0 || intra == 0.0 {
        return Err(Error::Degenerate("gap ratio needs intra- and cross-modality positive pairs".into()));
    }
    Ok((cross / nc as f64) / (intra / ni as f64))
}

pub const CMC_RANKS: [usize; 4] = [1, 5, 10, 20];
pub const DEFAULT_BINS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub direction: String,
    pub num_queries: usize,
    pub num_gallery: usize,
    pub dropped_queries: usize,
    /// Full CMC curve up to rank 20 (or the gallery size, if larger).
    pub cmc: Vec<f64>,
    pub map: f64,
    pub minp: f64,
    pub histogram: SimilarityHistogram,
    pub gap_ratio: f64,
}

impl EvalReport {
    pub fn rank(&self, k: usize) -> f64 {
        if self.cmc.is_empty() {
            return 0.0;
        }
        self.cmc[(k - 1).min(self.cmc.len() - 1)]
    }

    pub fn rank1(&self) -> f64 {
        self.rank(1)
    }

    /// Key-value text, one `key = value` per line.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "direction = {}", self.direction);
        let _ = writeln!(out, "queries = {}", self.num_queries);
        let _ = writeln!(out, "gallery = {}", self.num_gallery);
        let _ = writeln!(out, "dropped_queries = {}", self.dropped_queries);
        for k in CMC_RANKS {
            let _ = writeln!(out, "rank{k} = {:?}", self.rank(k));
        }
        let _ = writeln!(out, "map = {:?}", self.map);
        let _ = writeln!(out, "minp = {:?}", self.minp);
        let _ = writeln!(out, "pos_cos_mean = {:?}", self.histogram.positive_mean);
        let _ = writeln!(out, "neg_cos_mean = {:?}", self.histogram.negative_mean);
        let _ = writeln!(out, "gap_ratio = {:?}", self.gap_ratio);
        out
    }

    /// Plot-ready table: CMC rows then histogram rows.
    ///
    /// ```text
    /// section,x,value,value2
    /// cmc,1,0.75,
    /// hist,-1.0,pos_count,neg_count
    /// ```
    pub fn to_table(&self) -> String {
        let mut out = String::from("section,x,value,value2\n");
        for (k, v) in self.cmc.iter().enumerate() {
            let _ = writeln!(out, "cmc,{},{:?},", k + 1, v);
        }
        let h = &self.histogram;
        for b in 0..h.positive.len() {
            let _ = writeln!(out, "hist,{:?},{},{}", h.edges[b], h.positive[b], h.negative[b]);
        }
        out
    }
}

/// Evaluates retrieval of `query` rows against `gallery` rows. The
/// histogram and gap ratio are computed over the union of both sets.
pub fn evaluate(
    query_feats: &Matrix,
    query_ids: &[usize],
    query_tag: ModalityTag,
    gallery_feats: &Matrix,
    gallery_ids: &[usize],
    gallery_tag: ModalityTag,
) -> Result<EvalReport> {
    let mut result = rank(query_feats, gallery_feats, query_ids, gallery_ids, Metric::Euclidean)?;
    result.query_modality = Some(query_tag);
    result.gallery_modality = Some(gallery_tag);
    let max_k = gallery_feats.rows().max(20);
    let curve = cmc(&result, max_k);

    let mut all = query_feats.as_slice().to_vec();
    all.extend_from_slice(gallery_feats.as_slice());
    let joint = Matrix::new(query_feats.rows() + gallery_feats.rows(), query_feats.cols(), all)?;
    let ids: Vec<usize> = query_ids.iter().chain(gallery_ids).copied().collect();
    let tags: Vec<ModalityTag> = std::iter::repeat_n(query_tag, query_ids.len())
        .chain(std::iter::repeat_n(gallery_tag, gallery_ids.len()))
        .collect();
    let histogram = similarity_histogram(&joint, &ids, &tags, DEFAULT_BINS)?;
    let gap_ratio = modality_gap_ratio(&joint, &ids, &tags).unwrap_or(f64::NAN);

    Ok(EvalReport {
        direction: format!("{query_tag}->{gallery_tag}"),
        num_queries: result.queries.len(),
        num_gallery: gallery_feats.rows(),
        dropped_queries: result.dropped,
        cmc: curve,
        map: mean_ap(&result),
        minp: minp(&result),
        histogram,
        gap_ratio,
    })
}

/// Query/gallery direction. `T2v` (infrared queries, visible gallery) is
/// the default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Direction {
    #[default]
    T2v,
    V2t,
}

impl Direction {
    pub fn query_gallery(self) -> (ModalityTag, ModalityTag) {
        match self {
            Direction::T2v => (ModalityTag::Infrared, ModalityTag::Visible),
            Direction::V2t => (ModalityTag::Visible, ModalityTag::Infrared),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::T2v => "t2v",
            Direction::V2t => "v2t",
        })
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t2v" => Ok(Direction::T2v),
            "v2t" => Ok(Direction::V2t),
            _ => Err(Error::config(format!("unknown direction {s:?} (expected t2v or v2t)"))),
        }
    }
}

/// Extracts post-BN test features for every row of `dataset` and evaluates
/// the given direction.
pub fn evaluate_model(params: &ModelParams, dataset: &SynthDataset, direction: Direction) -> Result<EvalReport> {
    if dataset.dim() != params.config.input_dim {
        return Err(Error::dim(format!(
            "model expects {} input features, dataset has {}",
            params.config.input_dim,
            dataset.dim()
        )));
    }
    let (qt, gt) = direction.query_gallery();
    let split = |tag: ModalityTag| -> Result<(Matrix, Vec<usize>)> {
        let idx = dataset.indices_of(tag);
        if idx.is_empty() {
            return Err(Error::dim(format!("dataset has no {tag} samples")));
        }
        let rows: Vec<&[f64]> = idx.iter().map(|&i| dataset.sample(i).features.as_slice()).collect();
        let feats = extract_test_features(params, &Matrix::from_rows(&rows)?)?;
        Ok((feats, idx.iter().map(|&i| dataset.sample(i).id).collect()))
    };
    let (qf, qid) = split(qt)?;
    let (gf, gid) = split(gt)?;
    let mut report = evaluate(&qf, &qid, qt, &gf, &gid, gt)?;
    report.direction = direction.to_string();
    Ok(report)
}
