//! Losses, the optimizer, and the session-parallel training loop.

mod config;
mod loss;
mod optimizer;
mod trainer;

pub use config::{LossKind, TrainConfig, PARAM_KEYS};
pub use loss::{bpr_max_loss, cross_entropy_loss, LossError, Objective, BPR_MAX_EPS};
pub use optimizer::{AdagradMomentum, OptimizerError, ADAGRAD_EPS};
pub use trainer::{fit, fit_with, EpochStats, LogQTable, StepCounters, TrainError, Trainer};
