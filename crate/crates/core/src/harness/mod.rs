//! Metrics, safety checks, parameter sweeps and the attack suite.

pub mod attacks;
pub mod checks;
mod metrics;
mod sweep;

pub use attacks::{run_suite, suite, AttackCase, AttackResult};
pub use metrics::{to_csv, CsvRow, GasLine, MetricsReport, Round, Spread};
pub use sweep::{sweep, SweepCell, SweepGrid, DEFAULT_EPOCH_DURATIONS_S, DEFAULT_NODES};
