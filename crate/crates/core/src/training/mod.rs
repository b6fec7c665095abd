//! Loss, optimiser, schedule, early stopping, metrics, historical baselines
//! and the training loop.

pub mod metrics;
pub mod optim;
pub mod train;

pub use metrics::{
    compute_metrics, evaluate, evaluate_baseline, historical_baseline, predict_windows, BaselineMode,
    MetricsAccumulator, MetricsReport, Scores, MAPE_FLOOR,
};
pub use optim::{adam_step, clip_grad_norm, cosine_lr, early_stop_update, mse_loss, AdamState, EarlyStopping, StopDecision};
pub use train::{train, EpochRecord, TrainConfig, TrainOutcome};
