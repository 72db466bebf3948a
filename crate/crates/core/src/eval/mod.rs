//! Metrics and the experiment harness.

mod experiments;
mod metrics;

pub use experiments::{
    congestion_baseline, congestion_grid, detect_congestion, error_accumulation, evaluate, model_forecaster,
    run_ablation, sweep_p, AblationRun, AccumulationRow, AccumulationTable, SweepRow, ACCUMULATION_MULTIPLES,
};
pub use metrics::{compute_metrics, Metrics, MetricsAccumulator, MetricsReport};
