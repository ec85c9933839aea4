//! Library side of the `freewtd` binary: configuration, subcommands and
//! their file formats.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{bench, engine_evaluator, natd, stats, verify, wtd, BenchOutcome, Evaluator, VerifyOutcome};
pub use config::{RunConfig, DEFAULT_CONFIG};
pub use error::{CliError, CliResult};
