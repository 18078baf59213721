//! Scenario files, trace export and the subcommands behind the `pfcc` binary.

pub mod commands;
pub mod export;
pub mod scenario;
