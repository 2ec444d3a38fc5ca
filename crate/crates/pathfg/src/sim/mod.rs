//! Scenario configuration, closed-loop simulation harness, horizon study,
//! and run artifacts.

pub mod config;
pub mod harness;
pub mod output;
pub mod study;

pub use config::{load_config, paper_config, SimConfig};
pub use harness::{run_closed_loop, run_ungoverned, SimLog, Verdict};
pub use output::write_outputs;
pub use study::run_horizon_study;
