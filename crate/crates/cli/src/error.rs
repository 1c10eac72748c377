use std::fmt;
use std::path::Path;

use uqline_core::debias::DebiasError;
use uqline_core::measures::{MeasureError, ScoreCsvError};
use uqline_core::records::{RecordError, SplitError};
use uqline_core::synth::SynthError;
use uqline_core::{ModelFileError, PrrError, StatsError};

/// Process exit status. The numeric values are a stable contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    Data = 2,
    Usage = 64,
    Schema = 65,
    NoInput = 66,
}

#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

impl CliError {
    pub fn new(exit: Exit, message: impl Into<String>) -> Self {
        Self {
            exit,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Exit::Usage, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(Exit::Data, message)
    }

    pub fn schema(message: impl Into<String>) -> Self {
        Self::new(Exit::Schema, message)
    }

    /// Prefixes the message with the file it concerns.
    pub fn in_file(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }

    pub fn read_failure(path: &Path, err: std::io::Error) -> Self {
        let exit = if err.kind() == std::io::ErrorKind::NotFound {
            Exit::NoInput
        } else {
            Exit::Data
        };
        Self::new(exit, format!("cannot read {}: {err}", path.display()))
    }

    pub fn write_failure(path: &Path, err: std::io::Error) -> Self {
        Self::data(format!("cannot write {}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<RecordError> for CliError {
    fn from(e: RecordError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<ScoreCsvError> for CliError {
    fn from(e: ScoreCsvError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<MeasureError> for CliError {
    fn from(e: MeasureError) -> Self {
        match e {
            MeasureError::UnknownMeasure(_) => Self::usage(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<PrrError> for CliError {
    fn from(e: PrrError) -> Self {
        match e {
            PrrError::KeyMismatch(_) => Self::schema(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<DebiasError> for CliError {
    fn from(e: DebiasError) -> Self {
        match e {
            DebiasError::ModelMismatch(_) => Self::schema(e.to_string()),
            DebiasError::BadDegree(_) => Self::usage(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<ModelFileError> for CliError {
    fn from(e: ModelFileError) -> Self {
        Self::schema(e.to_string())
    }
}

impl From<SplitError> for CliError {
    fn from(e: SplitError) -> Self {
        match e {
            SplitError::BadFraction(_) => Self::usage(e.to_string()),
            SplitError::Degenerate { .. } => Self::data(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        Self::usage(e.to_string())
    }
}
