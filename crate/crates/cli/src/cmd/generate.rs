use vireid_core::synthdata::{generate, generate_split};
use vireid_core::{FeatureLayout, GeneratorConfig, ModalityTag, RngStream, SynthDataset};

use crate::failure::{CmdResult, Failure, Validating};
use crate::{GenPreset, GenerateArgs};

pub fn config_from(a: &GenerateArgs) -> CmdResult<GeneratorConfig> {
    let mut cfg = match a.preset {
        Some(GenPreset::Benchmark) => GeneratorConfig::benchmark(),
        Some(GenPreset::Default) | None => GeneratorConfig::default(),
    };
    cfg.n_ids = a.ids.unwrap_or(cfg.n_ids);
    cfg.per_modality = a.per_modality.unwrap_or(cfg.per_modality);
    if a.shared_dims.is_some() || a.color_dims.is_some() || a.modality_dims.is_some() {
        let l = cfg.layout;
        cfg.layout = FeatureLayout::new(
            a.shared_dims.unwrap_or(l.shared_dims),
            a.color_dims.unwrap_or(l.color_dims),
            a.modality_dims.unwrap_or(l.modality_dims),
        )
        .validating()?;
    }
    cfg.gap_strength = a.gap.unwrap_or(cfg.gap_strength);
    cfg.noise_sigma = a.noise.unwrap_or(cfg.noise_sigma);
    cfg.color_scale = a.color_scale.unwrap_or(cfg.color_scale);
    cfg.prototype_scale = a.prototype_scale.unwrap_or(cfg.prototype_scale);
    cfg.validate().validating()?;
    Ok(cfg)
}

fn summary(ds: &SynthDataset) -> String {
    format!(
        "{} ids, {} visible, {} infrared, {} grayscale, {} features",
        ds.num_ids(),
        ds.count(ModalityTag::Visible),
        ds.count(ModalityTag::Infrared),
        ds.count(ModalityTag::Grayscale),
        ds.dim()
    )
}

pub fn run(a: GenerateArgs) -> CmdResult {
    let cfg = config_from(&a)?;
    if a.test_out.as_deref() == Some(a.out.as_path()) {
        return Err(Failure::usage("--out and --test-out name the same file"));
    }
    let (train, test) = match &a.test_out {
        Some(_) => {
            let (tr, te) = generate_split(&cfg, a.seed)?;
            (tr, Some(te))
        }
        None => (generate(&cfg, &mut RngStream::new(a.seed))?, None),
    };
    super::write(&a.out, &train.to_text())?;
    println!("wrote {}: {}", a.out.display(), summary(&train));
    if let (Some(path), Some(test)) = (&a.test_out, test) {
        super::write(path, &test.to_text())?;
        println!("wrote {}: {}", path.display(), summary(&test));
    }
    Ok(())
}
