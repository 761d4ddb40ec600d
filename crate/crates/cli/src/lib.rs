//! Command-line frontend for the `rwsgd` estimator: CSV ingestion, fitting
//! with checkpoint/resume, report re-emission and simulation studies.

pub mod commands;
pub mod error;
pub mod ingest;
pub mod manifest;

pub use commands::{run, Cli};
pub use error::CliError;
