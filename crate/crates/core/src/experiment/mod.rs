//! Config-driven Monte-Carlo harness.
//!
//! A run synthesizes each trial's truth and observation once, feeds the same
//! whitened observation to every enabled method, and writes one metrics row
//! per (sweep point, trial, method). Wall-clock times go to a separate
//! `timing.csv`, so `metrics.csv` depends only on the config and seed.
//! Aggregation is a separate pass over the CSV.

mod aggregate;
mod config;
mod metrics;
mod runner;

pub use aggregate::{aggregate, read_metrics, write_aggregate, AggregateRow, Stat};
pub use config::{
    ExperimentConfig, Grids, Method, OmpSettings, Preset, RawConfig, Scenario, Sweep, SweepVariable, SystemOverrides, VemSettings,
};
pub use metrics::{compute_metrics, Metrics, MetricsRow, TimingRow};
pub use runner::{run_experiment, run_method, run_trial, trial_seed, MethodOutput, RunOutput, TrialInputs};
