//! Run orchestration behind the command-line tool: configuration,
//! checkpoints, training, evaluation, sweeps, MAC accounting and figures.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod macs;
pub mod svg;
pub mod sweep;
pub mod train;
pub mod viz;
