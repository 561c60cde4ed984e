//! Command-line front end: corpus generation, training, evaluation, charts
//! and run comparison.

pub mod app;
pub mod compare;
pub mod error;
pub mod plot;
pub mod tables;

pub use error::{CliError, CliResult};
