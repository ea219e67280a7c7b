//! Metrics, experiment drivers, configuration and the command-line entry.

pub mod cli;
pub mod config;
pub mod consistency;
pub mod contraction;
pub mod heatmap;
pub mod io;
pub mod metrics;
pub mod sweep;
