use std::fmt;
use std::path::Path;

use permanence::Error;

/// Failure classes with their process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Io,
    Usage,
    Config,
    MissingPrerequisite,
    CalibrationInfeasible,
    Data,
    Model,
    Numerical,
}

impl Kind {
    pub fn code(self) -> &'static str {
        match self {
            Kind::Io => "io",
            Kind::Usage => "usage",
            Kind::Config => "config",
            Kind::MissingPrerequisite => "missing-prerequisite",
            Kind::CalibrationInfeasible => "calibration-infeasible",
            Kind::Data => "data",
            Kind::Model => "model",
            Kind::Numerical => "numerical",
        }
    }

    pub fn exit_status(self) -> i32 {
        match self {
            Kind::Io => 1,
            Kind::Usage => 2,
            Kind::Config => 3,
            Kind::MissingPrerequisite => 4,
            Kind::CalibrationInfeasible => 5,
            Kind::Data => 6,
            Kind::Model => 7,
            Kind::Numerical => 8,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Kind::Config, message)
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new(Kind::Io, format!("{}: {err}", path.display()))
    }

    pub fn missing(path: &Path, produced_by: &str) -> Self {
        Self::new(
            Kind::MissingPrerequisite,
            format!("{} not found (run `{produced_by}` first)", path.display()),
        )
    }
}

impl fmt::Display for CliError {
    // One line, so scripts can split on the first `: `.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = self.message.replace(['\n', '\r'], " ");
        write!(f, "error[{}]: {msg}", self.kind.code())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::MissingFile(_) => Kind::MissingPrerequisite,
            Error::Io { .. } => Kind::Io,
            Error::Csv(_)
            | Error::MissingColumn(_)
            | Error::HeaderMismatch { .. }
            | Error::DuplicateImage(_)
            | Error::InvalidInput(_)
            | Error::ScoreOutOfRange { .. }
            | Error::UnknownMatcher(_)
            | Error::IncompleteScores { .. }
            | Error::Empty(_) => Kind::Data,
            Error::CalibrationInfeasible { .. } => Kind::CalibrationInfeasible,
            Error::RankDeficient { .. }
            | Error::FactorLevelAbsent { .. }
            | Error::UnknownVariable(_)
            | Error::InvalidSpec(_)
            | Error::ConstantOutcome
            | Error::NotNested(_) => Kind::Model,
            Error::InfeasibleConfig(_) => Kind::Config,
            Error::Numerical(_) => Kind::Numerical,
        };
        CliError::new(kind, e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
