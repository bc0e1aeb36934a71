//! Triple inverted pendulum benchmark: plant, nominal LQ baseline, cost
//! evaluation, trial runner and the JSON run configuration.

pub mod baseline;
pub mod config;
pub mod cost;
pub mod pendulum;
pub mod trial;

pub use baseline::mbplq_controller;
pub use config::{CostConfig, RunConfig, SystemConfig};
pub use cost::evaluate_cost;
pub use pendulum::build_triple_pendulum;
pub use trial::{run_table1, run_trial, table1_trials, ControllerKind, Reference, TrialConfig, TrialReport};
