//! Ground-station service for the vigilance monitor: a WebSocket telemetry
//! and command protocol over live replays, plus the `vigil` command line.

pub mod cli;
pub mod protocol;
pub mod server;
pub mod session;
