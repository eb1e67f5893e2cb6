//! Scenario replay, oracle checks and benchmarks for the geo-matching
//! pipeline.

pub mod bench;
pub mod config;
pub mod generator;
pub mod oracle;
pub mod replay;
pub mod report;
pub mod scenario;

pub use config::{Config, ConfigError};
pub use generator::{generate, GenConfig};
pub use oracle::{oracle_check, simulate, BruteForceIndex, Divergence, OracleReport};
pub use replay::{replay, replay_with_index, ReplayError};
pub use report::{render_metrics, LatencyHistogram, Metric, MetricsFormat, RunReport};
pub use scenario::{format_scenario, parse_scenario, ParseError, ScenarioEvent};
