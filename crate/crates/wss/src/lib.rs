//! Study drivers, configuration, and report emission around `wss-core`.
//!
//! The library half of the `wss` binary: Monte Carlo engines reproducing
//! the regression-level and the dose-finding operating-characteristic
//! studies, the JSON study configuration, and CSV/JSON report writers.
//! Replicates run on a rayon pool; every replicate owns a counter-derived
//! ChaCha stream, so results are bit-identical for any worker count.

pub mod config;
pub mod dataset;
pub mod mcpmod_study;
pub mod regression;
pub mod report;
pub mod scenarios;
pub mod summary;

pub use config::{Mode, OutputFormat, StudyConfig};
pub use mcpmod_study::{run_mcpmod_study, McpModReport, McpModScenario, TrueModel};
pub use regression::{run_regression_study, RegressionReport, RegressionScenario};

/// Version string stamped into run manifests and reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Schema tag embedded in every JSON report.
pub const REPORT_SCHEMA_VERSION: &str = "wss-report/1";

/// Derive the RNG stream id for a work unit. Kind separates purposes
/// (replicates, calibration, critical-value pools), the cell index
/// separates grid cells, and the replicate index separates replicates.
pub(crate) fn stream_id(kind: u8, cell: u32, replicate: u32) -> u64 {
    ((kind as u64) << 56) | ((cell as u64) << 32) | replicate as u64
}

pub(crate) mod streams {
    pub const REPLICATE: u8 = 0;
    pub const POWER: u8 = 1;
    pub const CALIBRATION: u8 = 2;
    pub const CRITICAL_POOL: u8 = 3;
}
