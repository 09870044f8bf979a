//! Scenarios, closed-loop runs, metrics and file output.

pub mod builtin;
pub mod export;
pub mod metrics;
pub mod run;
pub mod scenario;

pub use metrics::Metrics;
pub use run::{run, run_batch, RunOutput, Summary};
pub use scenario::{load_scenario, Scenario, ScenarioFile};
