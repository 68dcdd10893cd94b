//! Real-time group vigilance monitoring for drone wildlife missions.
//!
//! The crate is organized the way a frame flows through the system:
//!
//! - [`vigilance`] scores one frame of detections into a group score.
//! - [`alerting`] turns the score stream into debounced, graduated alerts.
//! - [`pipeline`] runs inference, scoring and alerting under a latency budget.
//! - [`trace_io`] reads and writes recorded missions.
//! - [`replay`] re-runs recorded missions and simulates operator intervention.
//! - [`metrics`] summarizes replays into warning-window and data-quality reports.

pub mod alerting;
pub mod error;
pub mod trace_io;
pub mod vigilance;

pub use error::ConfigError;
pub mod monitor;
pub mod replay;
pub mod metrics;
pub mod pipeline;
