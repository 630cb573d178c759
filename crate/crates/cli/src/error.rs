use mhssmamba::data::DataError;
use mhssmamba::model::ModelError;
use mhssmamba::tensor::TensorError;
use mhssmamba::train::TrainError;
use thiserror::Error;

/// Every failure a command can report, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Numeric(_) => CliError::Numeric(e.to_string()),
            // Shape disagreements come from incompatible settings.
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Config(e.to_string()),
            ModelError::Stage {
                source: TensorError::Numeric(_),
                ..
            } => CliError::Numeric(e.to_string()),
            ModelError::Stage { .. } => CliError::Config(e.to_string()),
            ModelError::Tensor(t) => t.into(),
            ModelError::Data(d) => d.into(),
            ModelError::Format { .. } | ModelError::Io(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::Contract(_) => CliError::Data(e.to_string()),
            TrainError::Numeric(_) => CliError::Numeric(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Data(d) => d.into(),
        }
    }
}
