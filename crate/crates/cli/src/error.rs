use std::path::{Path, PathBuf};

use renet_events::{EventIoError, ReprError, SceneError};
use renet_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error at {}: {msg}", path.display())]
    Data { path: PathBuf, msg: String },
    #[error("checkpoint mismatch at {}: {msg}", path.display())]
    CheckpointMismatch { path: PathBuf, msg: String },
    #[error("io error at {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn data(path: &Path, msg: impl ToString) -> Self {
        CliError::Data { path: path.to_path_buf(), msg: msg.to_string() }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| CliError::Io { path: path.to_path_buf(), source }
    }

    /// Process exit status: 2 for configuration problems, 3 for bad or missing data.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data { .. } | CliError::CheckpointMismatch { .. } | CliError::Io { .. } => 3,
            CliError::Nn(_) | CliError::GradCheck(_) => 1,
        }
    }
}

pub(crate) trait AtPath<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> AtPath<T> for std::result::Result<T, EventIoError> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|e| CliError::data(path, e))
    }
}

impl<T> AtPath<T> for std::result::Result<T, ReprError> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|e| CliError::data(path, e))
    }
}

impl<T> AtPath<T> for std::result::Result<T, renet_events::pnm::PnmError> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|e| CliError::data(path, e))
    }
}

impl<T> AtPath<T> for std::result::Result<T, SceneError> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|e| match e {
            SceneError::Config(m) => CliError::Config(m),
            SceneError::Kv(k) => CliError::Config(k.to_string()),
            other => CliError::data(path, other),
        })
    }
}
