//! Planning and simulation toolkit for long-running LLM training campaigns
//! on shared HPC clusters.

pub mod cli;
pub mod perf;
pub mod render;
pub mod report;
pub mod resilience;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod storage;
pub mod units;

/// Version recorded in reports and trace headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
