use thiserror::Error;
use vmbeam_core::CoreError;
use vmbeam_model::ModelError;
use vmbeam_tensor::TensorError;

/// Harness failures, grouped by the exit code they map to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Config(_) | CoreError::RejectionExhausted(_) | CoreError::OutsideRoom(_) => CliError::Config(msg),
            CoreError::NonFinite(_)
            | CoreError::Singular { .. }
            | CoreError::ZeroTrace { .. }
            | CoreError::DecayRange(_) => CliError::Numeric(msg),
            _ => CliError::Data(msg),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let msg = e.to_string();
        match e {
            ModelError::Config(_) => CliError::Config(msg),
            ModelError::NonFinite { .. } => CliError::Numeric(msg),
            ModelError::Tensor(TensorError::NonFinite(_) | TensorError::Singular { .. }) => CliError::Numeric(msg),
            ModelError::Core(c) => c.into(),
            _ => CliError::Data(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_documented_exit_codes() {
        let config: CliError = ModelError::Config("x".into()).into();
        let data: CliError = std::io::Error::new(std::io::ErrorKind::NotFound, "x").into();
        let numeric: CliError = ModelError::NonFinite {
            step: 3,
            what: "loss",
            detail: "nan".into(),
        }
        .into();
        let core_numeric: CliError = ModelError::Core(CoreError::NonFinite("x")).into();
        assert_eq!(config.exit_code(), 2);
        assert_eq!(data.exit_code(), 3);
        assert_eq!(numeric.exit_code(), 4);
        assert_eq!(core_numeric.exit_code(), 4);
    }
}
