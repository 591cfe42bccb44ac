//! Command implementations behind the `levy-tilt` binary, exposed as a
//! library so integration tests can drive them in-process.

pub mod commands;
pub mod config;

pub use commands::{exit_code_for, run, CliOverrides, Outcome};
pub use config::{Mode, RunConfig};
