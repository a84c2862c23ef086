//! Experiment orchestration: configs, baselines, runs, sweeps, plots and the
//! consensus checks.

pub mod config;
pub mod baselines;
pub mod consensus;
pub mod report;
pub mod plot;
pub mod runner;
pub mod sweep;
