//! Reproducible experiments over the sync engine: scripted scenarios,
//! convergence fuzzing, latency and payload benchmarks, and a live serve
//! mode for interactive clients.

pub mod bench;
pub mod error;
pub mod fuzz;
pub mod interleave;
pub mod laws;
pub mod mesh;
pub mod replica;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod serve;

pub use error::{HarnessError, Result};
pub use report::RunReport;
pub use runner::run_scenario;
pub use scenario::Scenario;
