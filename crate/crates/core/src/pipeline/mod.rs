//! Two-stage training, inference and anomaly scoring.

mod checkpoint;
mod config;
mod data;
mod infer;
mod log;
mod train;

pub use checkpoint::Checkpoint;
pub use config::{Reduction, TrainConfig};
pub use data::{load_cohort, load_subject, load_volume, phantom_seed, phantom_training_set, Subject};
pub use infer::{
    infer, infer_model, patient_score, reduce_map, region_means, region_scores, Foreground, InferenceResult,
    ScoreOptions, Scores,
};
pub use log::{LossLog, LossRecord};
pub use train::{
    reconstruction_mse, train_full, train_stage1, train_stage1_with, train_stage2, train_stage2_with, Progress,
};
