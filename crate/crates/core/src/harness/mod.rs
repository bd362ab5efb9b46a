//! Configuration, seeded trial execution, sweeps and file formats.

pub mod config;
pub mod io;
pub mod rng;
pub mod sweep;
pub mod trial;

pub use config::{CoverageConfig, ScenarioConfig, SelectionConfig};
pub use rng::{stream_rng, Stream};
pub use sweep::{run_trials, summarize, sweep, sweep_samples, trial_coverage, trial_coverage_map, trial_metrics, Axis, Metric, SweepRow, SweepSpec};
pub use trial::{
    estimate, prepare_trial, run_trial, trial_bounds, trial_echoes, Estimate, ExperimentRecord, PreparedTrial, Timings,
    TrialOutput,
};
