//! Branch models, training, inference and fusion.

pub mod branch;
pub mod config;
pub mod eval;
pub mod fusion;
pub mod infer;
pub mod model;
pub mod objectives;
pub mod train;

pub use config::{Ablation, Branch, FiqeStage, TrainingConfig};
pub use eval::{evaluate, Evaluation};
pub use fusion::{fuse, pwfs_fuse, FusedPrediction, FusionStrategy};
pub use infer::{branch_infer, predict_dataset, predict_group, BranchPrediction, GroupPrediction, InferenceSettings};
pub use model::UalModel;
pub use train::{fit, EpochReport, Trainer, TrainingRun};
