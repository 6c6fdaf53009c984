//! Experiment driver: runs controllers over score streams for several seeds,
//! measures true FPR/TPR against the stream's population laws, and writes
//! the results as CSV.

mod bounds;
mod experiment;
mod output;
mod settings;

pub use bounds::{coin_toss_time, predicted_bounds, PredictedBounds};
pub use experiment::{
    aggregate, default_grid, run_experiment, run_experiment_with, run_seed, tpr95_baseline, tpr95_threshold,
    Aggregate, ExperimentConfig, Method, MetricsRow, RunOutput, RunSummary, TrendRow,
};
pub use output::{
    format_g6, read_metrics, write_metrics, write_outputs, write_summary, write_trend,
    METRICS_HEADER,
};
pub use settings::{parse_key_values, SimulateSettings};
