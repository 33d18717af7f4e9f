//! Experiment orchestration: configs, sweeps, result files and replay.

pub mod config;
pub mod execute;
pub mod output;
pub mod presets;

pub use config::{ConfigError, ExperimentConfig, GridParams, GridPoint};
pub use execute::{
    derive_seed, execute, run_unit, EventLine, ExperimentResult, ResultRow, RowStatus, RunOptions,
    UnitRun,
};
pub use output::{
    aggregate_rows, emit_reports, replay, report, run_experiment, HeatmapFormat, ReplayOutcome,
    RunnerError,
};

/// Overrides the configured output directory.
pub const OUT_ENV: &str = "CHAINBENCH_OUT";
