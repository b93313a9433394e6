use probekit::analysis::AnalysisError;
use probekit::dataset::DatasetError;
use probekit::lab::LabError;
use probekit::mdl::MdlError;
use probekit::probing::ProbingError;
use probekit::repr::{JoinError, ReprError};
use thiserror::Error;

/// Process exit codes.
pub mod code {
    pub const OTHER: u8 = 1;
    pub const IO: u8 = 2;
    pub const DEGENERATE: u8 = 3;
    pub const PROBE_INPUT: u8 = 4;
    pub const OBJECTIVE: u8 = 5;
    pub const RECORDS: u8 = 6;
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Self::new(code::IO, format!("{}: {err}", path.display()))
    }

    pub fn context(mut self, path: &std::path::Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        let code = match e {
            DatasetError::Empty(_) | DatasetError::NoTestSplit(_) => code::DEGENERATE,
            _ => code::IO,
        };
        Self::new(code, e.to_string())
    }
}

impl From<ProbingError> for CliError {
    fn from(e: ProbingError) -> Self {
        let code = match e {
            ProbingError::EmptyDataset(_) | ProbingError::Degenerate { .. } => code::DEGENERATE,
            ProbingError::Io { .. } => code::IO,
            ProbingError::Parse { .. } => code::PROBE_INPUT,
        };
        Self::new(code, e.to_string())
    }
}

impl From<ReprError> for CliError {
    fn from(e: ReprError) -> Self {
        let code = match e {
            ReprError::Io { .. } => code::IO,
            _ => code::PROBE_INPUT,
        };
        Self::new(code, e.to_string())
    }
}

impl From<JoinError> for CliError {
    fn from(e: JoinError) -> Self {
        Self::new(code::PROBE_INPUT, e.to_string())
    }
}

impl From<MdlError> for CliError {
    fn from(e: MdlError) -> Self {
        Self::new(code::PROBE_INPUT, e.to_string())
    }
}

impl From<LabError> for CliError {
    fn from(e: LabError) -> Self {
        let code = match e {
            LabError::Config(_) => code::OBJECTIVE,
            _ => code::OTHER,
        };
        Self::new(code, e.to_string())
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        let code = match e {
            AnalysisError::Io(_) => code::IO,
            _ => code::RECORDS,
        };
        Self::new(code, e.to_string())
    }
}
