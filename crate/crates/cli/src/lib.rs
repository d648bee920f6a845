//! Library surface of the pipeline driver: run configuration, stage
//! implementations, and plot emission. The `thermopose` binary is a thin
//! argument parser over these.

pub mod config;
pub mod plots;
pub mod stages;
