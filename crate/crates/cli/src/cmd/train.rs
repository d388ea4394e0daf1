use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use vireid_core::batch::eligible_ids;
use vireid_core::trainer::{train_with_observer, EPOCH_LOG_HEADER};
use vireid_core::{Checkpoint, EpochLog, Error, ModelParams, OptimState, TrainConfig};

use crate::failure::{CmdResult, Failure, Validating};
use crate::runconf::{RunConfig, EVAL_SHA, TRAIN_SHA};
use crate::TrainArgs;

pub const MANIFEST: &str = "manifest.txt";
pub const MODEL: &str = "model.ckpt";
pub const EPOCHS: &str = "epochs.csv";
pub const EVAL: &str = "eval.txt";
pub const EVAL_TABLE: &str = "eval_table.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

fn manifest(rc: &RunConfig, train_sha: &str, eval_sha: Option<&str>) -> String {
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let command: Vec<String> = std::env::args().collect();
    let mut out = String::from("# Run manifest. Replay with: vireid train --config manifest.txt --out-dir <new dir>\n");
    out += &format!("manifest.version = {}\n", env!("CARGO_PKG_VERSION"));
    out += &format!("manifest.command = {}\n", command.join(" "));
    out += &format!("manifest.created_unix = {created}\n");
    out += &format!("manifest.seed = {}\n", rc.train.seed);
    out += &format!("{TRAIN_SHA} = {train_sha}\n");
    if let Some(s) = eval_sha {
        out += &format!("{EVAL_SHA} = {s}\n");
    }
    out += &format!("manifest.artifacts = {MANIFEST},{EPOCHS},{MODEL},{EVAL},{EVAL_TABLE}\n");
    out + &rc.to_text()
}

fn epoch_line(log: &EpochLog) -> String {
    let mut s = format!(
        "epoch {:>4}  {}  lr {:.3e}  loss {:.5}",
        log.epoch, log.stage, log.lr, log.loss
    );
    if let Some(r) = &log.eval {
        s += &format!("  rank1 {:.4}  map {:.4}  minp {:.4}", r.rank1(), r.map, r.minp);
    }
    s
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn run(a: TrainArgs) -> CmdResult {
    let mut rc = RunConfig::load(a.config.as_deref(), TrainConfig::default(), &a.sets)?;
    if let Some(p) = a.data {
        rc.data_train = Some(p);
        rc.expect_train_sha = None;
    }
    if let Some(p) = a.eval_data {
        rc.data_eval = Some(p);
        rc.expect_eval_sha = None;
    }
    let train_path = rc
        .data_train
        .clone()
        .ok_or_else(|| Failure::usage("no training data: pass --data or set data.train"))?;
    let (train_set, train_sha) = super::load_dataset(&train_path, rc.expect_train_sha.as_deref())?;
    let eval = match &rc.data_eval {
        Some(p) => Some(super::load_dataset(p, rc.expect_eval_sha.as_deref())?),
        None => None,
    };
    if let Some((ev, _)) = &eval {
        if ev.dim() != train_set.dim() {
            return Err(Failure::usage(format!(
                "evaluation data has {} features, training data {}",
                ev.dim(),
                train_set.dim()
            )));
        }
    }
    let spec = rc.train.batch;
    let eligible = eligible_ids(&train_set, spec.k).len();
    if eligible < spec.p {
        return Err(Failure::usage(format!(
            "{}: batches need {} identities with >= {} visible and infrared samples, found {eligible}",
            train_path.display(),
            spec.p,
            spec.k
        )));
    }
    rc.train
        .model_config(train_set.dim(), train_set.num_ids())
        .validate()
        .validating()?;
    super::check_fresh_dir(&a.out_dir)?;

    // Inputs are valid; from here on failures are runtime failures.
    let dir = a.out_dir;
    super::create_dir(&dir)?;
    super::write(
        &dir.join(MANIFEST),
        &manifest(&rc, &train_sha, eval.as_ref().map(|(_, s)| s.as_str())),
    )?;
    let epochs_path = dir.join(EPOCHS);
    super::write(&epochs_path, &format!("{EPOCH_LOG_HEADER}\n"))?;
    if rc.checkpoint_every > 0 {
        super::create_dir(&dir.join(CHECKPOINT_DIR))?;
    }

    let every = rc.checkpoint_every;
    let quiet = a.quiet;
    let mut observer = |log: &EpochLog, params: &ModelParams, optim: &OptimState| -> vireid_core::Result<()> {
        let mut f = OpenOptions::new()
            .append(true)
            .open(&epochs_path)
            .map_err(|e| io(&epochs_path, e))?;
        writeln!(f, "{}", log.csv_row()).map_err(|e| io(&epochs_path, e))?;
        if every > 0 && (log.epoch + 1) % every == 0 {
            let ckpt = Checkpoint {
                params: params.clone(),
                optim: Some(optim.clone()),
            };
            ckpt.save(dir.join(CHECKPOINT_DIR).join(format!("epoch_{:04}.ckpt", log.epoch + 1)))?;
        }
        if !quiet {
            println!("{}", epoch_line(log));
        }
        Ok(())
    };
    let out = train_with_observer(&train_set, eval.as_ref().map(|(d, _)| d), &rc.train, &mut observer)?;

    Checkpoint {
        params: out.params.clone(),
        optim: Some(out.optim.clone()),
    }
    .save(dir.join(MODEL))?;
    if let Some(r) = out.final_eval() {
        super::write(&dir.join(EVAL), &r.to_kv())?;
        super::write(&dir.join(EVAL_TABLE), &r.to_table())?;
        print!("{}", r.to_kv());
    } else {
        println!("no evaluation data; skipped final evaluation");
    }
    println!("run directory: {}", dir.display());
    Ok(())
}
