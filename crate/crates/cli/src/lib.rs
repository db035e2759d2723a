//! Experiment harness for `adacrit-core`: TOML configurations, seeded
//! multi-run execution, grid search, budget certificates, shift sweeps,
//! optimizer comparisons, trace files and SVG plots.

pub mod certify;
pub mod cli;
pub mod compare;
pub mod config;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod plot;
pub mod registry;
pub mod sweep;
pub mod trace_io;

pub use cli::cli_main;
pub use config::ExperimentConfig;
pub use error::HarnessError;
pub use experiment::{execute, RunOutput};
pub use registry::{build, Problem};
