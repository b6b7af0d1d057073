//! Missing-modality protocol: corruption, objectives, optimization,
//! training and evaluation.

mod corrupt;
mod eval;
mod loss;
mod metrics;
mod optim;
mod train;

pub use corrupt::{corrupt, corrupt_sample, erased_positions, CorruptionMode, Modality};
pub use eval::{evaluate, evaluate_sweep, sweep_rates, Evaluation};
pub use loss::{task_loss, total_loss};
pub use metrics::{metrics, pearson, Metrics, MetricsReport, RateRow};
pub use optim::{AdamW, AdamWConfig, LrSchedule};
pub use train::{train, EpochLog, TrainConfig, TrainReport};
