//! File formats, dataset IO, training driver and command-line front end for `acm-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod density_file;
pub mod error;
pub mod evaluate;
pub mod imageio;
pub mod training;

pub use error::{Error, Result};
