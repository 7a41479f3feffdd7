//! Command pipeline for the `lightcone` binary: run configuration, frame
//! similarity scoring, output plumbing, and the six subcommands.

pub mod config;
pub mod output;
pub mod pipeline;
pub mod ssim;
