//! Experiment runner for `ctflow`: TOML configs, the `run`, `verify` and
//! `oracle` verbs, and their on-disk artifacts.

pub mod config;
pub mod oracle_cmd;
pub mod run;
pub mod verify_cmd;

pub use config::{Algo, ConfigError, ExperimentConfig};
pub use oracle_cmd::{dp_oracle, oracle_cmd, CacheStatus};
pub use run::{run, RunSummary};
pub use verify_cmd::verify_cmd;
