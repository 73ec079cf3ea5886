//! Config ingestion, presets and Monte Carlo experiments.

pub mod config;
pub mod experiment;
pub mod presets;

pub use config::ExperimentConfig;
pub use experiment::{log_linear_fit, run_experiment, sweep, RateFit, ExperimentOutcome, Resolved, Summary, SweepParam, SweepTable};
pub use presets::{preset, Preset};
