use alloc::string::String;
use core::fmt;

/// Failure modes shared by every module of the core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Invalid configuration or mismatched dimensions.
    Config(String),
    /// Input data violates a precondition (non-finite values, non-binary treatment, empty arm).
    Data(String),
    /// An operation was called in the wrong order (e.g. backprop without forward).
    State(String),
    /// A training loss became non-finite.
    Divergence { term: &'static str, epoch: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::State(msg) => write!(f, "state error: {msg}"),
            Error::Divergence { term, epoch } => {
                write!(f, "numerical divergence: loss `{term}` is not finite at epoch {epoch}")
            }
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(alloc::format!($($arg)*)) };
}

macro_rules! data_err {
    ($($arg:tt)*) => { $crate::error::Error::Data(alloc::format!($($arg)*)) };
}

pub(crate) use config_err;
pub(crate) use data_err;
