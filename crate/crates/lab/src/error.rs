use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("numerical divergence in {term} at epoch {epoch}")]
    Divergence { term: String, epoch: usize },

    #[error(transparent)]
    Core(vluci::Error),

    #[error("{failed} of {total} repeats failed; first failure: {first}")]
    Repeats { failed: usize, total: usize, first: Box<LabError> },
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    /// Process exit status: 2 for configuration, 3 for data, 4 for divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 2,
            LabError::Data(_) | LabError::Parse { .. } | LabError::Io { .. } => 3,
            LabError::Divergence { .. } => 4,
            LabError::Repeats { first, .. } => first.exit_code(),
            LabError::Core(e) => match e {
                vluci::Error::Config(_) | vluci::Error::State(_) => 2,
                vluci::Error::Data(_) => 3,
                vluci::Error::Divergence { .. } => 4,
            },
        }
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(io::Error) -> LabError + '_ {
        move |source| LabError::Io { path: path.to_path_buf(), source }
    }
}

impl From<vluci::Error> for LabError {
    fn from(e: vluci::Error) -> Self {
        match e {
            vluci::Error::Divergence { term, epoch } => LabError::Divergence { term: term.to_string(), epoch },
            other => LabError::Core(other),
        }
    }
}
