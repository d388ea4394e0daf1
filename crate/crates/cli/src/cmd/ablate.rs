use vireid_core::synthdata::benchmark_split;
use vireid_core::trainer::{ablate, lambda1_sweep, loss_variants, modality_variants, Variant};
use vireid_core::TrainConfig;

use crate::failure::{CmdResult, Failure};
use crate::runconf::RunConfig;
use crate::{AblateArgs, AblatePreset};

/// Parses `name:key=value,key=value` (the override list may be empty).
pub fn parse_variant(s: &str) -> CmdResult<Variant> {
    let (name, rest) = s.split_once(':').unwrap_or((s, ""));
    if name.trim().is_empty() {
        return Err(Failure::usage(format!("variant {s:?} has no name")));
    }
    let mut overrides = Vec::new();
    for kv in rest.split(',').map(str::trim).filter(|kv| !kv.is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("variant {name}: expected key=value, got {kv:?}")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(Variant {
        name: name.trim().to_string(),
        overrides,
    })
}

pub fn run(a: AblateArgs) -> CmdResult {
    let base = if a.config.is_some() {
        TrainConfig::default()
    } else {
        TrainConfig::benchmark()
    };
    let mut rc = RunConfig::load(a.config.as_deref(), base, &a.sets)?;
    if a.data.is_some() {
        rc.data_train = a.data.clone();
        rc.data_eval = a.eval_data.clone();
    }
    if a.seeds.is_empty() {
        return Err(Failure::usage("--seeds is empty"));
    }

    let mut variants = Vec::new();
    for p in &a.preset {
        variants.extend(match p {
            AblatePreset::Modality => modality_variants(&rc.train),
            AblatePreset::Losses => loss_variants(),
            AblatePreset::Lambda1 => lambda1_sweep(),
        });
    }
    for v in &a.variant {
        variants.push(parse_variant(v)?);
    }
    for v in &variants {
        v.apply(&rc.train)
            .map_err(|e| Failure::usage(format!("variant {}: {e}", v.name)))?;
    }

    let fixed = match (&rc.data_train, &rc.data_eval, a.benchmark) {
        (Some(tr), Some(ev), false) => Some((super::load_dataset(tr, None)?.0, super::load_dataset(ev, None)?.0)),
        (Some(_), None, false) => {
            return Err(Failure::usage("fixed training data needs evaluation data too (data.eval)"));
        }
        _ => None,
    };
    if let Some(parent) = a.out.as_deref().and_then(|p| p.parent()) {
        if !parent.as_os_str().is_empty() && !parent.is_dir() {
            return Err(Failure::usage(format!("{} is not a directory", parent.display())));
        }
    }

    eprintln!(
        "ablate: {} variant(s) x {} seed(s) on {}",
        variants.len().max(1),
        a.seeds.len(),
        if fixed.is_some() { "fixed data" } else { "the benchmark split" }
    );
    let report = ablate(
        |seed| match &fixed {
            Some((tr, ev)) => Ok((tr.clone(), ev.clone())),
            None => benchmark_split(seed),
        },
        &rc.train,
        &variants,
        &a.seeds,
    )?;
    let table = report.to_table();
    match &a.out {
        Some(p) => super::write(p, &table)?,
        None => print!("{table}"),
    }
    let failed: Vec<&str> = report
        .rows
        .iter()
        .filter(|r| r.error.is_some())
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("variants failed: {}", failed.join(", "))))
    }
}
