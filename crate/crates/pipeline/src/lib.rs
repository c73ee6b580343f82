//! Sweeps, feature store and mapping runs behind the `phasemap` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod store;

pub use commands::{cmd_energy, cmd_features, cmd_map, cmd_report, cmd_sweep, load_grid, EnergySummary, SweepSummary};
pub use config::PipelineConfig;
pub use error::{PipelineError, Result};
pub use store::FeatureStore;
