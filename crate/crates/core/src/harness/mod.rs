//! Experiment orchestration: configuration, scenarios, statistics, oracles
//! and output files.

pub mod config;
pub mod fokker_planck;
pub mod output;
pub mod scenarios;
pub mod stats;
pub mod verify;
