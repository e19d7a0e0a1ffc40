use thiserror::Error;
use zvq_core::models::ModelError;

/// Command failure, classified by exit code.
#[derive(Debug, Error)]
pub enum Failure {
    /// Exit 1: bad flags, config or arguments.
    #[error("{0}")]
    Usage(String),
    /// Exit 2: unreadable or inconsistent input data.
    #[error("{0:#}")]
    Data(anyhow::Error),
    /// Exit 3: non-finite values during training or inference.
    #[error("{0}")]
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Failure::Data(anyhow::anyhow!(msg.into()))
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        if let Some(ModelError::NonFinite(msg)) = e.downcast_ref::<ModelError>() {
            return Failure::Numerical(msg.clone());
        }
        Failure::Data(e)
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite(msg) => Failure::Numerical(msg),
            ModelError::Config(msg) => Failure::Usage(msg),
            other => Failure::Data(other.into()),
        }
    }
}
