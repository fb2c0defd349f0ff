use std::io;
use std::path::Path;

use thiserror::Error;

use shm_denoise::dataprep::DataError;
use shm_denoise::eval::EvalError;
use shm_denoise::series::SeriesError;
use shm_denoise::signal::SignalError;
use shm_denoise::train::{CheckpointError, TrainError, TrainReport};

/// Failure of one subcommand; [`CliError::exit_code`] is the process status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{0}")]
    Data(String),
    #[error("{message}")]
    Numeric {
        message: String,
        partial: Option<Box<TrainReport>>,
    },
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CliError::Numeric {
            message: message.into(),
            partial: None,
        }
    }

    /// 0 success, 1 config or usage, 2 I/O, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Io { .. } | CliError::Data(_) => 2,
            CliError::Numeric { .. } => 3,
        }
    }

    /// Attributes a series error to the file it came from.
    pub fn series(path: &Path, e: SeriesError) -> Self {
        match e {
            SeriesError::Io(source) => CliError::io(path, source),
            other => CliError::Data(format!("{}: {other}", path.display())),
        }
    }
}

impl From<SignalError> for CliError {
    fn from(e: SignalError) -> Self {
        match e {
            SignalError::Invalid { field, reason } => CliError::Config(format!("{field}: {reason}")),
            SignalError::ZeroSignalPower | SignalError::ZeroNoisePower => CliError::Config(format!("noise: {e}")),
            SignalError::Series(s) => CliError::Data(s.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::ChannelMismatch { .. } => CliError::Config(e.to_string()),
            DataError::Series(SeriesError::Io(source)) => CliError::Io {
                path: "<data>".into(),
                source,
            },
            other => CliError::Config(format!("data: {other}")),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { epoch, reason, report } => CliError::Numeric {
                message: format!("training diverged at epoch {epoch}: {reason}"),
                partial: Some(report),
            },
            TrainError::NonFiniteGradient { .. } => CliError::numeric(e.to_string()),
            TrainError::Tensor(_) => CliError::numeric(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(source) => CliError::Io {
                path: "<checkpoint>".into(),
                source,
            },
            CheckpointError::Layer(l) => CliError::Config(l.to_string()),
            other => CliError::Data(format!("checkpoint: {other}")),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(source) => CliError::Io {
                path: "<output>".into(),
                source,
            },
            EvalError::NonFinite(_) => CliError::numeric(e.to_string()),
            EvalError::Checkpoint(c) => c.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}
