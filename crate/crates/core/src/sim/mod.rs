//! The coexistence experiment: scenario description, topology, traffic, the
//! slot-level engine and its outputs.

pub mod engine;
pub mod metrics;
pub mod scenario;
pub mod topology;
pub mod traffic;

pub use engine::{run, run_with_model, RunOptions};
pub use metrics::{MetricsReport, SummaryRow};
pub use scenario::{Direction, Policy, Scenario, Technology};
