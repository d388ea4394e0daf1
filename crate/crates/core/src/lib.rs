//! Cross-modality metric learning with a progressive two-stage schedule.
//!
//! The crate trains a small weight-shared encoder on visible, grayscale and
//! infrared feature rows. Stage 1 feeds grayscale + infrared batches and
//! mines triplets within each modality; stage 2 switches to visible +
//! infrared, mines globally and adds the modality-shared enhancement and
//! discriminative center losses. All gradients are analytic and checked
//! against finite differences (see [`gradcheck`]).
//!
//! Module map:
//! - [`linalg`]: matrices, distances, seeded random streams
//! - [`batch`]: modality tags, PK batch sampling, grayscale views
//! - [`losses`]: identity, triplet, MSEL and DCL losses and stage objectives
//! - [`model`]: MLP encoder with BN-neck and classifier, manual backprop
//! - [`optim`]: AdamW and cosine learning-rate schedule
//! - [`synthdata`]: synthetic benchmark generator and feature files
//! - [`evalkit`]: ranking, CMC, mAP, mINP, similarity histograms
//! - [`trainer`]: the two-stage loop and ablations
//! - [`config`]: flat key-value configuration files
//! - [`checkpoint`]: text checkpoints of parameters and optimizer state
//! - [`gradcheck`]: finite-difference checks of every gradient

pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evalkit;
pub mod gradcheck;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod optim;
pub mod synthdata;
pub mod trainer;

pub use batch::{BatchSpec, LabeledBatch, ModalityTag, Stage};
pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use evalkit::{Direction, EvalReport};
pub use linalg::{Matrix, Metric, RngStream};
pub use losses::{DclMode, LossConfig, LossOutput};
pub use model::{ModelConfig, ModelParams};
pub use optim::{AdamWConfig, OptimState};
pub use synthdata::{FeatureLayout, GeneratorConfig, SynthDataset};
pub use trainer::{EpochLog, Schedule, TrainConfig};
