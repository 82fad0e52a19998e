//! Experiment harness for the wall-bracing controller: configuration,
//! push sweeps, tracking runs, statistics and file formats.

pub mod config;
pub mod experiments;
pub mod io;
