//! Run configuration: a [`TrainConfig`] plus the keys only the CLI knows.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use vireid_core::config::{self, parse_entries, parse_override, parse_value};
use vireid_core::{Error, TrainConfig};

use crate::failure::{CmdResult, Failure, Validating};

pub const DATA_TRAIN: &str = "data.train";
pub const DATA_EVAL: &str = "data.eval";
pub const CHECKPOINT_EVERY: &str = "run.checkpoint_every";
/// Keys under this prefix describe a finished run and are ignored on load.
pub const MANIFEST_PREFIX: &str = "manifest.";
pub const TRAIN_SHA: &str = "manifest.data_train_sha256";
pub const EVAL_SHA: &str = "manifest.data_eval_sha256";

#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data_train: Option<PathBuf>,
    pub data_eval: Option<PathBuf>,
    /// Save a checkpoint every n epochs (0: only the final model).
    pub checkpoint_every: usize,
    /// Expected data hashes, present when replaying a manifest.
    pub expect_train_sha: Option<String>,
    pub expect_eval_sha: Option<String>,
}

impl RunConfig {
    /// Applies one entry. Relative data paths are taken relative to `base`.
    fn set(&mut self, key: &str, value: &str, base: &Path) -> vireid_core::Result<()> {
        let path = || {
            let p = PathBuf::from(value);
            if p.is_relative() { base.join(p) } else { p }
        };
        match key {
            DATA_TRAIN => self.data_train = Some(path()),
            DATA_EVAL => self.data_eval = Some(path()),
            CHECKPOINT_EVERY => self.checkpoint_every = parse_value(key, value)?,
            TRAIN_SHA => self.expect_train_sha = Some(value.to_string()),
            EVAL_SHA => self.expect_eval_sha = Some(value.to_string()),
            k if k.starts_with(MANIFEST_PREFIX) => {}
            _ => self.train.set(key, value)?,
        }
        Ok(())
    }

    /// Loads `path` (if any) over `base` and applies `key=value` overrides.
    pub fn load(path: Option<&Path>, base: TrainConfig, overrides: &[String]) -> CmdResult<Self> {
        let mut rc = RunConfig {
            train: base,
            ..Default::default()
        };
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
            let dir = path.parent().unwrap_or(Path::new("."));
            let entries = parse_entries(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            for e in entries {
                rc.set(&e.key, &e.value, dir).map_err(|err| {
                    Failure::usage(format!("{}: line {}: {err}", path.display(), e.line))
                })?;
            }
        }
        for o in overrides {
            let (k, v) = parse_override(o).validating()?;
            rc.set(&k, &v, Path::new(".")).map_err(|e| Failure::usage(format!("--set {o}: {e}")))?;
        }
        rc.train.validate().validating()?;
        Ok(rc)
    }

    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut pairs = self.train.to_pairs();
        let abs = |p: &Path| {
            let p = p.canonicalize().or_else(|_| std::path::absolute(p)).unwrap_or_else(|_| p.to_path_buf());
            p.display().to_string()
        };
        if let Some(p) = &self.data_train {
            pairs.insert(DATA_TRAIN.into(), abs(p));
        }
        if let Some(p) = &self.data_eval {
            pairs.insert(DATA_EVAL.into(), abs(p));
        }
        pairs.insert(CHECKPOINT_EVERY.into(), self.checkpoint_every.to_string());
        pairs
    }

    pub fn to_text(&self) -> String {
        config::render(&self.to_pairs())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads a file and returns its bytes with their hash, checking the hash
/// against `expect` when given.
pub fn read_hashed(path: &Path, expect: Option<&str>) -> CmdResult<(Vec<u8>, String)> {
    let bytes = std::fs::read(path).map_err(|e| Failure::usage(Error::Io { path: path.to_path_buf(), source: e }.to_string()))?;
    let sha = sha256_hex(&bytes);
    if let Some(want) = expect {
        if want != sha {
            return Err(Failure::usage(format!(
                "{} does not match the manifest (sha256 {sha}, expected {want})",
                path.display()
            )));
        }
    }
    Ok((bytes, sha))
}
