use std::fmt;

use polyocc::data::DataError;
use polyocc::eval::EvalError;
use polyocc::reconstruct::ReconstructError;
use polyocc::train::TrainError;

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// 2: unreadable, malformed or inconsistent input.
    BadInput(String),
    /// 3: no interior cell, so there is no surface.
    Unsolvable(String),
    /// 4: the per-building time limit was exceeded.
    Timeout(String),
    /// 5: anything else.
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::BadInput(_) => 2,
            CliError::Unsolvable(_) => 3,
            CliError::Timeout(_) => 4,
            CliError::Internal(_) => 5,
        }
    }

    pub fn input(context: impl fmt::Display, e: impl fmt::Display) -> Self {
        CliError::BadInput(format!("{context}: {e}"))
    }

    pub fn internal(context: impl fmt::Display, e: impl fmt::Display) -> Self {
        CliError::Internal(format!("{context}: {e}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::BadInput(m) => write!(f, "bad input: {m}"),
            CliError::Unsolvable(m) => write!(f, "unsolvable: {m}"),
            CliError::Timeout(m) => write!(f, "timeout: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Generation(_) | DataError::NonWatertight { .. } => {
                CliError::Internal(e.to_string())
            }
            _ => CliError::BadInput(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Internal(e.to_string()),
            TrainError::Data(d) => d.into(),
            _ => CliError::BadInput(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Train(t) => t.into(),
            EvalError::CheckpointMismatch(_) | EvalError::LengthMismatch { .. } => {
                CliError::BadInput(e.to_string())
            }
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<ReconstructError> for CliError {
    fn from(e: ReconstructError) -> Self {
        match e {
            ReconstructError::EmptyReconstruction => CliError::Unsolvable(e.to_string()),
            ReconstructError::LabelMismatch { .. } => CliError::BadInput(e.to_string()),
        }
    }
}
