//! The `u_a` benchmark, its two pipelines and the experiment harness.

pub mod baseline;
pub mod demo;
pub mod experiment;
pub mod ua;

pub use baseline::{
    linear_initialization, minimize_loss_j, riemannian_descent, DescentOptions, DescentTrace,
};
pub use demo::{feature_rank_demo, FeatureRankDemoConfig, FeatureRankReport};
pub use experiment::{
    nearest_rank, quantile_table, run_baseline, run_baseline_with, run_experiment, run_sur,
    run_sur_with, write_quantiles_csv, write_results_csv, ExperimentConfig, ExperimentResult,
    Method, Metrics, QuantileRow, ResultRow, RunOutcome,
};
pub use ua::UaOracle;
