//! Synthetic cross-modality datasets with a planted modality gap, plus the
//! text feature-file format used to ingest externally extracted features.
//!
//! A generated feature vector has three blocks:
//!
//! ```text
//! visible:   [ prototype + noise | color(id) + noise  | 0                       ]
//! infrared:  [ prototype + noise | 0                  | gap * (mod(id) + noise) ]
//! grayscale: grayscale_of(visible)
//! ```
//!
//! Only the shared block carries identity information in both modalities.
//! The color block identifies a person in the visible modality alone and
//! the modality block in the infrared modality alone, so a model that leans
//! on either does well within a modality and badly across modalities.
//!
//! # Feature file format (version 1)
//!
//! ```text
//! # vireid-features v1 shared=8 color=4 modality=4 gap=1.5 noise=0.8
//! id,modality,f0,f1,...,f{d-1}
//! 0,vis,1.2345678901234567e0,...
//! 0,ir,...
//! 0,gray,...
//! ```
//!
//! The leading `#` line is optional; when present it records the block
//! layout and generator parameters. The header row is required and fixes
//! the dimension. `modality` is one of `vis`, `ir`, `gray`. Values are
//! written with 17 significant digits so a save/load round trip is exact.
//! The j-th `gray` row of an identity is the grayscale view of its j-th
//! `vis` row.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use crate::batch::{grayscale_of, ModalityTag};
use crate::error::{Error, Result};
use crate::linalg::RngStream;

/// Split of a feature vector into shared, color and modality blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureLayout {
    pub shared_dims: usize,
    pub color_dims: usize,
    /// May be zero for layouts that only describe shared + color data.
    pub modality_dims: usize,
}

impl FeatureLayout {
    pub fn new(shared_dims: usize, color_dims: usize, modality_dims: usize) -> Result<Self> {
        if shared_dims == 0 || color_dims == 0 {
            return Err(Error::config("shared and color blocks need at least one dimension"));
        }
        Ok(Self {
            shared_dims,
            color_dims,
            modality_dims,
        })
    }

    pub fn total(&self) -> usize {
        self.shared_dims + self.color_dims + self.modality_dims
    }

    pub fn shared_range(&self) -> Range<usize> {
        0..self.shared_dims
    }

    pub fn color_range(&self) -> Range<usize> {
        self.shared_dims..self.shared_dims + self.color_dims
    }

    pub fn modality_range(&self) -> Range<usize> {
        self.shared_dims + self.color_dims..self.total()
    }
}

impl Default for FeatureLayout {
    fn default() -> Self {
        Self {
            shared_dims: 8,
            color_dims: 4,
            modality_dims: 4,
        }
    }
}

/// Generator knobs. `n_ids`, `per_modality`, `gap_strength` and
/// `noise_sigma` are the primary ones; the scales set block magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub n_ids: usize,
    pub per_modality: usize,
    pub layout: FeatureLayout,
    pub gap_strength: f64,
    pub noise_sigma: f64,
    /// Std-dev of the per-identity color vector.
    pub color_scale: f64,
    /// Std-dev of the per-identity prototype.
    pub prototype_scale: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_ids: 16,
            per_modality: 8,
            layout: FeatureLayout::default(),
            gap_strength: 1.5,
            noise_sigma: 0.8,
            color_scale: 1.0,
            prototype_scale: 1.0,
        }
    }
}

impl GeneratorConfig {
    /// Settings of the bundled benchmark: 16 identities, 8 samples per
    /// modality, gap strength 1.5, low shared noise and a strong
    /// visible-only color block.
    pub fn benchmark() -> Self {
        Self {
            noise_sigma: 0.3,
            color_scale: 2.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_ids < 2 {
            return Err(Error::config("n_ids must be at least 2"));
        }
        if self.per_modality < 2 {
            return Err(Error::config("per_modality must be at least 2"));
        }
        if self.layout.modality_dims == 0 {
            return Err(Error::config("generator needs at least one modality dimension"));
        }
        FeatureLayout::new(
            self.layout.shared_dims,
            self.layout.color_dims,
            self.layout.modality_dims,
        )?;
        for (name, v) in [
            ("gap_strength", self.gap_strength),
            ("noise_sigma", self.noise_sigma),
            ("color_scale", self.color_scale),
            ("prototype_scale", self.prototype_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Latent description of one generated identity.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityPrototype {
    pub id: usize,
    pub shared: Vec<f64>,
    pub color: Vec<f64>,
    pub modality: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub modality: ModalityTag,
    pub features: Vec<f64>,
}

/// Sample indices of one identity, per modality. `grayscale[j]` is the
/// grayscale view of `visible[j]`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdentityRows {
    pub visible: Vec<usize>,
    pub infrared: Vec<usize>,
    pub grayscale: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    dim: usize,
    samples: Vec<Sample>,
    layout: Option<FeatureLayout>,
    identities: Vec<IdentityPrototype>,
    gap_strength: Option<f64>,
    noise_sigma: Option<f64>,
    index: BTreeMap<usize, IdentityRows>,
}

/// Equality over what the feature file records: samples, layout and the
/// generator parameters. Latent prototypes are not serialized.
impl PartialEq for SynthDataset {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.samples == other.samples
            && self.layout == other.layout
            && self.gap_strength.map(f64::to_bits) == other.gap_strength.map(f64::to_bits)
            && self.noise_sigma.map(f64::to_bits) == other.noise_sigma.map(f64::to_bits)
    }
}

impl SynthDataset {
    /// Builds a dataset from raw samples, checking dimensions, finiteness
    /// and the grayscale pairing.
    pub fn from_samples(samples: Vec<Sample>, layout: Option<FeatureLayout>) -> Result<Self> {
        let dim = samples
            .first()
            .map(|s| s.features.len())
            .ok_or_else(|| Error::config("dataset has no samples"))?;
        if let Some(l) = layout {
            if l.total() != dim {
                return Err(Error::dim(format!(
                    "layout describes {} dims, samples have {dim}",
                    l.total()
                )));
            }
        }
        let mut index: BTreeMap<usize, IdentityRows> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(Error::dim(format!(
                    "sample {i} has {} features, expected {dim}",
                    s.features.len()
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("sample {i} has a non-finite feature")));
            }
            let rows = index.entry(s.id).or_default();
            match s.modality {
                ModalityTag::Visible => rows.visible.push(i),
                ModalityTag::Infrared => rows.infrared.push(i),
                ModalityTag::Grayscale => rows.grayscale.push(i),
            }
        }
        for (id, rows) in &index {
            if !rows.grayscale.is_empty() && rows.grayscale.len() != rows.visible.len() {
                return Err(Error::config(format!(
                    "identity {id}: {} grayscale rows but {} visible rows",
                    rows.grayscale.len(),
                    rows.visible.len()
                )));
            }
            if let Some(l) = layout {
                for (&g, &v) in rows.grayscale.iter().zip(&rows.visible) {
                    if grayscale_of(&samples[v].features, &l)? != samples[g].features {
                        return Err(Error::config(format!(
                            "identity {id}: sample {g} is not the grayscale view of sample {v}"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            dim,
            samples,
            layout,
            identities: Vec::new(),
            gap_strength: None,
            noise_sigma: None,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    pub fn layout(&self) -> Option<FeatureLayout> {
        self.layout
    }

    pub fn identities(&self) -> &[IdentityPrototype] {
        &self.identities
    }

    pub fn gap_strength(&self) -> Option<f64> {
        self.gap_strength
    }

    pub fn noise_sigma(&self) -> Option<f64> {
        self.noise_sigma
    }

    /// Identity ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.index.keys().copied()
    }

    pub fn num_ids(&self) -> usize {
        self.index.len()
    }

    pub fn rows_of(&self, id: usize) -> Option<&IdentityRows> {
        self.index.get(&id)
    }

    /// Position of `id` among the sorted identity ids; the classifier label.
    pub fn class_index(&self, id: usize) -> Option<usize> {
        self.index.keys().position(|&k| k == id)
    }

    /// Class label for every id, as a lookup table.
    pub fn class_map(&self) -> BTreeMap<usize, usize> {
        self.index.keys().enumerate().map(|(c, &id)| (id, c)).collect()
    }

    pub fn count(&self, tag: ModalityTag) -> usize {
        self.samples.iter().filter(|s| s.modality == tag).count()
    }

    /// Indices of all samples with the given tag, in storage order.
    pub fn indices_of(&self, tag: ModalityTag) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].modality == tag)
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut meta = String::from("# vireid-features v1");
        if let Some(l) = self.layout {
            let _ = write!(
                meta,
                " shared={} color={} modality={}",
                l.shared_dims, l.color_dims, l.modality_dims
            );
        }
        if let Some(g) = self.gap_strength {
            let _ = write!(meta, " gap={g:?}");
        }
        if let Some(n) = self.noise_sigma {
            let _ = write!(meta, " noise={n:?}");
        }
        out.push_str(&meta);
        out.push('\n');
        out.push_str("id,modality");
        for j in 0..self.dim {
            let _ = write!(out, ",f{j}");
        }
        out.push('\n');
        for s in &self.samples {
            let _ = write!(out, "{},{}", s.id, s.modality.file_token());
            for v in &s.features {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut layout = None;
        let mut gap = None;
        let mut noise = None;
        let mut dim = None;
        let mut samples = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                let mut shared = None;
                let mut color = None;
                let mut modality = None;
                for tok in meta.split_whitespace() {
                    let Some((k, v)) = tok.split_once('=') else {
                        continue;
                    };
                    let num = |v: &str| {
                        v.parse::<f64>()
                            .map_err(|_| Error::parse(line_no, format!("bad value in `{tok}`")))
                    };
                    let count = |v: &str| {
                        v.parse::<usize>()
                            .map_err(|_| Error::parse(line_no, format!("bad value in `{tok}`")))
                    };
                    match k {
                        "shared" => shared = Some(count(v)?),
                        "color" => color = Some(count(v)?),
                        "modality" => modality = Some(count(v)?),
                        "gap" => gap = Some(num(v)?),
                        "noise" => noise = Some(num(v)?),
                        _ => {}
                    }
                }
                if let (Some(s), Some(c), Some(m)) = (shared, color, modality) {
                    layout = Some(
                        FeatureLayout::new(s, c, m).map_err(|e| Error::parse(line_no, e.to_string()))?,
                    );
                }
                continue;
            }
            let tokens: Vec<&str> = line.split(',').map(str::trim).collect();
            let Some(d) = dim else {
                if tokens.len() < 3 || tokens[0] != "id" || tokens[1] != "modality" {
                    return Err(Error::parse(line_no, "expected header `id,modality,f0,...`"));
                }
                for (j, t) in tokens[2..].iter().enumerate() {
                    if *t != format!("f{j}") {
                        return Err(Error::parse(line_no, format!("expected column `f{j}`, found `{t}`")));
                    }
                }
                let d = tokens.len() - 2;
                if let Some(l) = layout {
                    if l.total() != d {
                        return Err(Error::parse(
                            line_no,
                            format!("header declares {d} features but layout has {}", l.total()),
                        ));
                    }
                }
                dim = Some(d);
                continue;
            };
            if tokens.len() != d + 2 {
                return Err(Error::parse(
                    line_no,
                    format!("expected {} fields, found {}", d + 2, tokens.len()),
                ));
            }
            let id = tokens[0]
                .parse::<usize>()
                .map_err(|_| Error::parse(line_no, format!("bad identity `{}`", tokens[0])))?;
            let modality = ModalityTag::from_file_token(tokens[1])
                .ok_or_else(|| Error::parse(line_no, format!("unknown modality `{}`", tokens[1])))?;
            let features = tokens[2..]
                .iter()
                .map(|t| match t.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(Error::parse(line_no, format!("bad feature value `{t}`"))),
                })
                .collect::<Result<Vec<_>>>()?;
            samples.push(Sample {
                id,
                modality,
                features,
            });
        }
        if dim.is_none() {
            return Err(Error::parse(0, "missing header row"));
        }
        let mut ds = Self::from_samples(samples, layout)?;
        ds.gap_strength = gap;
        ds.noise_sigma = noise;
        Ok(ds)
    }

    /// Draws fresh samples for the stored identities: same prototypes, new
    /// noise. Used for closed-set held-out evaluation.
    pub fn resample(&self, per_modality: usize, rng: &mut RngStream) -> Result<Self> {
        let (Some(layout), Some(gap), Some(noise)) = (self.layout, self.gap_strength, self.noise_sigma)
        else {
            return Err(Error::State("only generated datasets can be resampled".into()));
        };
        if self.identities.is_empty() {
            return Err(Error::State("dataset carries no identity prototypes".into()));
        }
        if per_modality == 0 {
            return Err(Error::config("per_modality must be positive"));
        }
        let samples = draw_samples(&self.identities, per_modality, layout, gap, noise, rng)?;
        let mut ds = Self::from_samples(samples, Some(layout))?;
        ds.identities = self.identities.clone();
        ds.gap_strength = Some(gap);
        ds.noise_sigma = Some(noise);
        Ok(ds)
    }
}

fn gaussian_vec(rng: &mut RngStream, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.gaussian()).collect()
}

fn draw_samples(
    identities: &[IdentityPrototype],
    per_modality: usize,
    layout: FeatureLayout,
    gap: f64,
    noise: f64,
    rng: &mut RngStream,
) -> Result<Vec<Sample>> {
    let d = layout.total();
    let mut samples = Vec::with_capacity(identities.len() * per_modality * 3);
    for proto in identities {
        let mut visible = Vec::with_capacity(per_modality);
        for _ in 0..per_modality {
            let mut f = vec![0.0; d];
            for (k, j) in layout.shared_range().enumerate() {
                f[j] = proto.shared[k] + noise * rng.gaussian();
            }
            for (k, j) in layout.color_range().enumerate() {
                f[j] = proto.color[k] + noise * rng.gaussian();
            }
            visible.push(f);
        }
        let mut infrared = Vec::with_capacity(per_modality);
        for _ in 0..per_modality {
            let mut f = vec![0.0; d];
            for (k, j) in layout.shared_range().enumerate() {
                f[j] = proto.shared[k] + noise * rng.gaussian();
            }
            for (k, j) in layout.modality_range().enumerate() {
                f[j] = gap * (proto.modality[k] + noise * rng.gaussian());
            }
            infrared.push(f);
        }
        let gray = visible
            .iter()
            .map(|v| grayscale_of(v, &layout))
            .collect::<Result<Vec<_>>>()?;
        for (tag, rows) in [
            (ModalityTag::Visible, visible),
            (ModalityTag::Infrared, infrared),
            (ModalityTag::Grayscale, gray),
        ] {
            samples.extend(rows.into_iter().map(|features| Sample {
                id: proto.id,
                modality: tag,
                features,
            }));
        }
    }
    Ok(samples)
}

/// Generates a dataset per the block model in the module docs.
/// Deterministic for a given config and stream seed.
pub fn generate(cfg: &GeneratorConfig, rng: &mut RngStream) -> Result<SynthDataset> {
    cfg.validate()?;
    let layout = cfg.layout;
    let identities: Vec<IdentityPrototype> = (0..cfg.n_ids)
        .map(|id| IdentityPrototype {
            id,
            shared: gaussian_vec(rng, layout.shared_dims, cfg.prototype_scale),
            color: gaussian_vec(rng, layout.color_dims, cfg.color_scale),
            modality: gaussian_vec(rng, layout.modality_dims, 1.0),
        })
        .collect();
    let samples = draw_samples(
        &identities,
        cfg.per_modality,
        layout,
        cfg.gap_strength,
        cfg.noise_sigma,
        rng,
    )?;
    let mut ds = SynthDataset::from_samples(samples, Some(layout))?;
    ds.identities = identities;
    ds.gap_strength = Some(cfg.gap_strength);
    ds.noise_sigma = Some(cfg.noise_sigma);
    Ok(ds)
}

const TEST_SPLIT_TAG: u64 = 77;

/// Train and test sets for one seed. The test set holds fresh identities
/// drawn from the same generator, so evaluation never sees a training
/// identity. The train set equals `generate(cfg, RngStream::new(seed))`.
pub fn generate_split(cfg: &GeneratorConfig, seed: u64) -> Result<(SynthDataset, SynthDataset)> {
    let mut rng = RngStream::new(seed);
    let train = generate(cfg, &mut rng)?;
    let test = generate(cfg, &mut rng.split(TEST_SPLIT_TAG))?;
    Ok((train, test))
}

/// [`generate_split`] with [`GeneratorConfig::benchmark`].
pub fn benchmark_split(seed: u64) -> Result<(SynthDataset, SynthDataset)> {
    generate_split(&GeneratorConfig::benchmark(), seed)
}
