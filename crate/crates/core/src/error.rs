use thiserror::Error;

use crate::system::Label;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix A is singular")]
    SingularMatrix,
    #[error("symmetric part of A has nonnegative eigenvalue {0}")]
    NotContracting(f64),
    #[error("periodic signal needs at least one transition")]
    EmptyTransitions,
    #[error("dwell values must be positive and finite, got {0}")]
    NonpositiveDwell(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operation unsupported for dimension {0}")]
    UnsupportedDimension(usize),
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("unknown mode label `{0}`")]
    UnknownLabel(Label),
    #[error("certificate of mode `{0}` is not an identity-weighted quadratic")]
    UnsupportedCertificate(Label),
    #[error("mu must be >= 1, got {0}")]
    InvalidMu(f64),
    #[error("subsystems do not share alpha, beta and decay rate")]
    HeterogeneousCertificates,
    #[error("no configuration satisfies r <= 2d (r = {r}, d = {d})")]
    EmptyConfiguration { d: f64, r: f64 },
    #[error("no epsilon in the search range satisfies the threshold condition")]
    NoThreshold,
    #[error("state became non-finite at t = {0}")]
    NonfiniteState(f64),
    #[error("trajectory does not match the switching signal: {0}")]
    SignalMismatch(String),
    #[error("signal has {available} switches, {required} required")]
    InsufficientSwitches { required: usize, available: usize },
    #[error("invalid subsystem: {0}")]
    InvalidSubsystem(String),
    #[error("invalid signal: {0}")]
    InvalidSignal(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },
    #[error("validation error at `{path}`: {message}")]
    Validation { path: String, message: String },
    #[error("{analysis}: {source}")]
    Analysis {
        analysis: String,
        #[source]
        source: Box<Error>,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn in_analysis(self, analysis: impl Into<String>) -> Self {
        Error::Analysis {
            analysis: analysis.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code for the CLI: 3 for input errors, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonfiniteState(_) | Error::NoThreshold => 4,
            Error::Analysis { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
