//! Experiment orchestration: configuration, the split / select / evaluate
//! pipeline, and the CSV files consumed by the plotting scripts.

mod config;
mod curves;
mod experiment;

pub use config::{parse_grid, DataSource, ExperimentConfig, TrainConfig, TrainParams};
pub use curves::{
    emit_curves, CurvePoint, TradeoffPoint, CURVE_HEADER, RESULTS_HEADER, TRADEOFF_HEADER,
};
pub use experiment::{
    run_experiment, train_from_config, ExperimentReport, ResultRow, SeedFailure, Selection,
    BASELINE_METHOD, ROBUST_METHOD,
};
