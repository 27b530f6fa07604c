//! Library surface of the `drcbf` command-line tool: scenario loading with
//! override handling, output writers, and the three commands. Kept as a
//! library so the command paths are testable without spawning processes.

pub mod commands;
pub mod config_io;
pub mod output;
pub mod selftest;

pub use commands::{cmd_compare, cmd_run, cmd_selftest, Overrides};

/// Exit code for configuration/validation failures.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit code for simulation aborts.
pub const EXIT_SIM_ABORT: i32 = 3;
