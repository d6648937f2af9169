//! File formats, configuration and orchestration around `tblind-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpus_io;
pub mod error;
pub mod pipeline;
pub mod report;

pub use config::RunConfig;
pub use error::CliError;
