//! Batch front-end for `proxcert`: configuration parsing and the `certify`,
//! `solve` and `sweep` commands.
//!
//! Exit codes: 0 on success or a passing certificate, 2 on a certified
//! failure, 1 on any operational error.

pub mod config;
pub mod run;

pub use config::{parse_config, Command, ConfigError, RunConfig};
pub use run::{run_command, solve_trace, RunOptions, RunOutcome, Status};
