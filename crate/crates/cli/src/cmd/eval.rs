use vireid_core::evalkit::evaluate_model;
use vireid_core::{Checkpoint, Direction, Error, EvalReport};

use crate::failure::{CmdResult, Failure};
use crate::{DirectionArg, EvalArgs};

pub fn directions(d: DirectionArg) -> Vec<Direction> {
    match d {
        DirectionArg::T2v => vec![Direction::T2v],
        DirectionArg::V2t => vec![Direction::V2t],
        DirectionArg::Both => vec![Direction::T2v, Direction::V2t],
    }
}

pub fn run(a: EvalArgs) -> CmdResult {
    let ckpt = Checkpoint::load(&a.checkpoint)
        .map_err(|e| Failure::usage(format!("{}: {e}", a.checkpoint.display())))?;
    let (data, _) = super::load_dataset(&a.data, None)?;

    // Every report is computed before anything is written.
    let mut reports: Vec<EvalReport> = Vec::new();
    for d in directions(a.direction) {
        let r = evaluate_model(&ckpt.params, &data, d).map_err(|e| match e {
            Error::Dimension(_) => Failure::usage(format!("{} vs {}: {e}", a.checkpoint.display(), a.data.display())),
            e => Failure::from(e),
        })?;
        reports.push(r);
    }

    if let Some(dir) = &a.out_dir {
        super::create_dir(dir)?;
        for r in &reports {
            super::write(&dir.join(format!("eval_{}.txt", r.direction)), &r.to_kv())?;
            super::write(&dir.join(format!("eval_{}_table.csv", r.direction)), &r.to_table())?;
        }
    }
    for (i, r) in reports.iter().enumerate() {
        if i > 0 {
            println!();
        }
        print!("{}", r.to_kv());
    }
    Ok(())
}
