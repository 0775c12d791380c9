//! File formats, preprocessing, experiment configuration, the grid-search
//! sweep and rendering around the `pmace-core` solvers.

pub mod array_io;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod preprocess;
pub mod render;

pub use error::{CliError, CliResult};
