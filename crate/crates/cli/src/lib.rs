//! Command implementations behind the `texel` binary.

pub mod commands;
pub mod scenario;

pub use commands::{cmd_check, cmd_learn, cmd_run, cmd_sweep, parse_seeds, CheckOptions, Outcome, Summary};
pub use scenario::ScenarioFile;
