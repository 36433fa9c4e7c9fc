//! Experiment driver: configuration, orchestration and artifact output for
//! normalized Ricci flow runs.

pub mod artifacts;
pub mod commands;
pub mod config;
