//! Configured training runs, checkpoints, metrics and the comparison recipes built on
//! top of them.

mod checkpoint;
mod config;
mod metrics;
mod recipes;
mod train;

pub use checkpoint::{Checkpoint, OptimizerSnapshot, RngPositions, CHECKPOINT_FORMAT};
pub use config::{
    apply_overrides, config_with_overrides, CltsSection, ExperimentConfig, ModelSection,
    OptimizerSection, RunSection, ScheduleSection, CONFIG_SCHEMA_VERSION, TOY_EMA_RATE, TOY_LR0,
};
pub use metrics::{parse_jsonl, to_csv as metrics_csv, MetricsRow, CSV_HEADER};
pub use train::{init_seed, train, TrainOutput, Trainer};
pub use recipes::{
    censored_median, compare, median, run_consistency, run_consistency_with_seeds, smoothness,
    train_gan, ConsistencyRun, GanSnapshot, SeedOutcome, SmoothnessConfig, SmoothnessReport,
    SpeedupReport, SubjectLandscape,
};
