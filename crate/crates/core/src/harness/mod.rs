//! Experiment engine: configuration, sweeps, validation runs, dataset
//! benchmarks and result files.

pub mod bench;
pub mod config;
pub mod ingest;
pub mod output;
pub mod plot;
pub mod queries;
pub mod sweep;
pub mod validation;

pub use config::{classify, Estimator, ExperimentConfig, MSpec, Regime, RegimeClass};
pub use sweep::{run_sweep, SweepResult};
pub use validation::{run_validation_suite, ValidationReport};
