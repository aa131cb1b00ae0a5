//! Optimizers, learning-rate schedules, the two training loops and
//! checkpoint serialization.

pub mod checkpoint;
pub mod config;
pub mod loops;
pub mod optim;
pub mod schedule;

pub use checkpoint::{Checkpoint, Dtype, ModelKind};
pub use config::{OptimizerKind, TrainConfig};
pub use loops::{train_can, train_can_from, train_nima, train_nima_from, CanHistory, CanStepRecord, NimaHistory};
pub use optim::{adam_step, momentum_step, AdamState, MomentumState, Optimizer};
pub use schedule::lr_schedule;
