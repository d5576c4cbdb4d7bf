//! Command-line front end for `modalmix`: data loading, packaged datasets,
//! synthetic data, and report/density output.

pub mod cli;
pub mod data;
pub mod error;
pub mod report;
pub mod simulate;

pub use error::CliError;
