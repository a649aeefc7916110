//! Experiment harness around `stochom-core`: configuration files, runners,
//! CSV/JSON artifacts and the acceptance suite.

pub mod acceptance;
pub mod config;
pub mod experiments;
pub mod expr;
pub mod report;

pub use config::{parse_config, ConfigError, ExperimentConfig, ExperimentKind};
pub use experiments::{run, Overrides};
pub use report::{RunReport, Status};
