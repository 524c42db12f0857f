//! Training loop, run configuration and experiment execution.

pub mod config;
pub mod experiment;
pub mod train;

pub use config::{RunConfig, StreamConfig, ENV_PREFIX};
pub use experiment::{
    aggregate, parse_values, report, run_experiment, run_seed, run_sweep, summary_csv, Aggregate, ExperimentSummary,
    SeedOutcome, SummaryRow, SUMMARY_HEADER,
};
pub use train::{stream_rng, RunState, Stream, TaskReport};
