//! Scenario loading, trace checkers, metrics and reports.

pub mod config;
pub mod fit;
pub mod metrics;
pub mod safety;
pub mod sweep;

pub use config::{ConfigError, Gst, ScenarioConfig};
pub use fit::{complexity_fit, FitError, FitReport, LinearFit};
pub use metrics::{metrics, LatencyStats, Metrics};
pub use safety::{check_safety, Check, Verdict, Violation};
pub use sweep::{evaluate, sweep, Aggregate, RunSummary, SweepFailure, SweepReport};
