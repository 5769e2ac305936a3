//! Configuration, file formats and the `steady | evolve | verify | sweep`
//! subcommands behind the `vckinetic` binary.

pub mod commands;
pub mod config;
pub mod snapshot;
pub mod tables;

pub use commands::{run, Command, ExitStatus, Invocation, OUT_DIR_ENV};
pub use config::RunConfig;
