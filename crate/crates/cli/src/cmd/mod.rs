pub mod ablate;
pub mod eval;
pub mod generate;
pub mod gradcheck;
pub mod train;

use std::path::Path;

use vireid_core::{Error, SynthDataset};

use crate::failure::{CmdResult, Failure};

/// Parses a dataset file. Returns the dataset and the sha256 of its bytes.
pub fn load_dataset(path: &Path, expect_sha: Option<&str>) -> CmdResult<(SynthDataset, String)> {
    let (bytes, sha) = crate::runconf::read_hashed(path, expect_sha)?;
    let text = String::from_utf8(bytes).map_err(|_| Failure::usage(format!("{}: not UTF-8 text", path.display())))?;
    let ds = SynthDataset::from_text(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    Ok((ds, sha))
}

pub fn write(path: &Path, text: &str) -> CmdResult {
    std::fs::write(path, text).map_err(|e| {
        Failure::Runtime(
            Error::Io {
                path: path.to_path_buf(),
                source: e,
            }
            .to_string(),
        )
    })
}

/// `dir` must not exist or be empty.
pub fn check_fresh_dir(dir: &Path) -> CmdResult {
    match std::fs::read_dir(dir).map(|mut it| it.next().is_none()) {
        Ok(true) => Ok(()),
        Ok(false) => Err(Failure::usage(format!(
            "run directory {} exists and is not empty",
            dir.display()
        ))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(Failure::usage(format!("{}: {e}", dir.display()))),
    }
}

pub fn create_dir(dir: &Path) -> CmdResult {
    std::fs::create_dir_all(dir).map_err(|e| {
        Failure::Runtime(
            Error::Io {
                path: dir.to_path_buf(),
                source: e,
            }
            .to_string(),
        )
    })
}
