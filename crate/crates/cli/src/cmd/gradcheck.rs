use vireid_core::gradcheck::{self, Component, Fault, GradcheckConfig};

use crate::failure::{CmdResult, Failure, Validating};
use crate::{FaultArg, GradcheckArgs};

pub fn run(a: GradcheckArgs) -> CmdResult {
    if a.seeds == 0 {
        return Err(Failure::usage("--seeds must be at least 1"));
    }
    if !(a.tolerance > 0.0 && a.step > 0.0) {
        return Err(Failure::usage("--tolerance and --step must be positive"));
    }
    let components = if a.component.is_empty() {
        Component::ALL.to_vec()
    } else {
        a.component
            .iter()
            .map(|c| c.parse::<Component>())
            .collect::<vireid_core::Result<Vec<_>>>()
            .validating()?
    };
    let cfg = GradcheckConfig {
        instances: a.seeds,
        seed: a.seed,
        step: a.step,
        tolerance: a.tolerance,
        components,
        fault: a.inject_fault.map(|f| match f {
            FaultArg::MselSignFlip => Fault::MselSignFlip,
        }),
    };
    let report = gradcheck::run(&cfg)?;
    print!("{}", report.to_text());
    if report.passed() {
        Ok(())
    } else {
        let bad: Vec<&str> = report
            .components
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.component.name())
            .collect();
        Err(Failure::Runtime(format!("gradient check failed for {}", bad.join(", "))))
    }
}
