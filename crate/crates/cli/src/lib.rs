//! Configuration and subcommands behind the `musalign` binary.

pub mod commands;
pub mod config;
