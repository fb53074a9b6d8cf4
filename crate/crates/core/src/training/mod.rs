//! Optimization: learning-rate groups, clipping, AdamW and the epoch loop.

mod llrd;
mod optim;
mod train;

pub use llrd::{build_llrd_groups, LearningRates, ParamGroup};
pub use optim::{
    adamw_update, clip_gradients, clip_slice, optimizer_step, OptimizerConfig, OptimizerKind,
    OptimizerState,
};
pub use train::{dev_accuracy, prepare_examples, train, EpochLog, TrainConfig};
