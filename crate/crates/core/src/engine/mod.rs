//! Experiment engine: configuration, workload generation, trace replay, the
//! event loop, metrics and sweeps.

pub mod config;
pub mod metrics;
pub mod sim;
pub mod sweep;
pub mod trace;
pub mod workload;

pub use config::{ConfigError, ResolvedConfig, SimConfig};
pub use metrics::MetricsReport;
pub use sim::{run, run_queries, SimError};
pub use sweep::{expand_grid, sweep};
