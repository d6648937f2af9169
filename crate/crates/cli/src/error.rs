use std::path::Path;

use tblind_core::dataset::DatasetError;
use tblind_core::editors::EditError;
use tblind_core::evaluation::EvalError;
use tblind_core::model::{ModelError, TrainingFailure};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const NUMERIC: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Data(_) => exit::DATA,
            CliError::Numeric(_) => exit::NUMERIC,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NumericalOverflow { .. } => CliError::Numeric(e.to_string()),
            ModelError::InvalidConfig { .. } => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EditError> for CliError {
    fn from(e: EditError) -> Self {
        match e {
            EditError::InvalidConfig(_) | EditError::UnknownTensor(_) => CliError::Config(e.to_string()),
            EditError::NonFiniteGradient { .. } | EditError::DidNotConverge(_) => CliError::Numeric(e.to_string()),
            EditError::IncompleteBatch(_) => CliError::Data(e.to_string()),
            EditError::Model(m) => m.into(),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Cell { source, .. } => source.into(),
            EvalError::NoEdits => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainingFailure> for CliError {
    fn from(e: TrainingFailure) -> Self {
        match e {
            TrainingFailure::EmptyCorpus => CliError::Data(e.to_string()),
            TrainingFailure::DidNotConverge { .. } => CliError::Numeric(e.to_string()),
            TrainingFailure::Model(m) => m.into(),
        }
    }
}

impl From<tblind_core::attribution::AttributionError> for CliError {
    fn from(e: tblind_core::attribution::AttributionError) -> Self {
        use tblind_core::attribution::AttributionError as A;
        match e {
            A::InvalidConfig(_) => CliError::Config(e.to_string()),
            A::DegenerateState => CliError::Numeric(e.to_string()),
            A::Model(m) => m.into(),
        }
    }
}
