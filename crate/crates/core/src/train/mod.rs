//! Mini-batch Adam training, early stopping, cross-validation, grid search
//! and ablation runs.

mod adam;
mod config;
mod cv;
mod early_stop;
mod trainer;

pub use adam::{clip_global_norm, Adam, AdamConfig};
pub use config::TrainConfig;
pub use cv::{
    grid_search, run_ablation, run_cv, run_cv_folds, run_fold, select_cell, AblationResult, CvResult, FoldResult,
    Grid, GridCell, GridResult, DEFAULT_FOLDS,
};
pub use early_stop::{EarlyStopping, StopDecision};
pub use trainer::{
    batch_gradient, init_seed, sequence_gradient, train, train_with, BatchGradient, EpochLog, TrainOutcome,
    TrainReport, Trainer,
};
