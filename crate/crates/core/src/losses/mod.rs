//! Loss functions with analytic gradients with respect to the input rows.
//!
//! Every loss returns a [`LossOutput`]: the scalar value and a gradient
//! matrix shaped like the embeddings (or logits, for the identity loss).
//!
//! Conventions shared by all metric losses:
//! - a hinge `[z]+` has subgradient 0 at exactly `z == 0`;
//! - hardest-positive / hardest-negative ties go to the lowest row index;
//! - the Euclidean distance has subgradient 0 where it is exactly zero.

mod dcl;
mod identity;
mod msel;
mod objective;
mod triplet;

use std::fmt;
use std::str::FromStr;

pub use dcl::{compute_centers, dcl, CenterStats};
pub use identity::identity_loss;
pub use msel::msel;
pub use objective::{stage1_objective, stage2_objective, stage_objective, LossTerms, ObjectiveOutput};
pub use triplet::{hard_triplet_global, hard_triplet_intra, pht};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Metric};

/// Denominators below this make a ratio loss degenerate.
pub const DENOM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Matrix,
}

/// Negative selection for the discriminative center loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum DclMode {
    /// Closest negative per center.
    Hard,
    /// Every negative.
    All,
    /// Negatives closer to the center than the center's mean negative distance.
    #[default]
    Dyn,
}

impl fmt::Display for DclMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DclMode::Hard => "hard",
            DclMode::All => "all",
            DclMode::Dyn => "dyn",
        })
    }
}

impl FromStr for DclMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(DclMode::Hard),
            "all" => Ok(DclMode::All),
            "dyn" => Ok(DclMode::Dyn),
            other => Err(Error::config(format!("unknown dcl mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    /// Weight of the modality-shared enhancement loss in stage 2.
    pub lambda1: f64,
    /// Weight of the discriminative center loss in stage 2.
    pub lambda2: f64,
    pub msel_metric: Metric,
    pub dcl_mode: DclMode,
    /// Add the identity loss to the stage-2 objective. Off by default.
    pub include_id_stage2: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 0.1,
            lambda1: 0.5,
            lambda2: 0.5,
            msel_metric: Metric::Euclidean,
            dcl_mode: DclMode::Dyn,
            include_id_stage2: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("margin", self.margin),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("loss.{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// `grad[row] += s * v`
#[inline]
pub(crate) fn axpy_row(grad: &mut Matrix, row: usize, s: f64, v: &[f64]) {
    for (g, x) in grad.row_mut(row).iter_mut().zip(v) {
        *g += s * x;
    }
}
