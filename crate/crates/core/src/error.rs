use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("bus group {buses:?} has no DER or grid source")]
    IslandWithoutSource { buses: Vec<usize> },
    #[error("admittance matrix is singular")]
    SingularNetwork,
    #[error("network solve failed: {0}")]
    SolveFailure(String),
    #[error("baseline window is empty")]
    EmptyBaselineWindow,
    #[error("baseline window [{start}, {end}] s contains scheduled event at {event} s")]
    BaselineOverlapsEvent { start: f64, end: f64, event: f64 },
    #[error("fault point is unreachable from bus {bus}")]
    Unreachable { bus: usize },
    #[error("invalid network: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RelayError {
    #[error("time went backwards: {t} s after {last} s")]
    MonotonicTimeViolation { t: f64, last: f64 },
    #[error("invalid neuron parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtectionError {
    #[error("DER has no connected lines")]
    NoConnectedLines,
    #[error("no output spike; no trip issued")]
    NoSpike,
    #[error("line {0} does not exist")]
    UnknownLine(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no first spike was recorded for this case")]
    MissedDetection,
    #[error("case list is empty")]
    EmptyBatch,
    #[error("current multiple {0} is at or below pickup")]
    BelowPickup(f64),
    #[error("spike precedes onset ({spike} s < {onset} s)")]
    SpikeBeforeOnset { spike: f64, onset: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("config error at `{path}`: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Relay(#[from] RelayError),
    #[error(transparent)]
    Protection(#[from] ProtectionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("at t = {t} s: {source}")]
    AtTime {
        t: f64,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable tag used by the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Grid(GridError::IslandWithoutSource { .. }) => "IslandWithoutSource",
            Error::Grid(GridError::SingularNetwork) => "SingularNetwork",
            Error::Grid(GridError::SolveFailure(_)) => "SolveFailure",
            Error::Grid(_) => "GridError",
            Error::Relay(_) => "RelayError",
            Error::Protection(_) => "ProtectionError",
            Error::Metrics(_) => "MetricsError",
            Error::Config(_) => "ConfigError",
            Error::AtTime { source, .. } => source.kind(),
            Error::Io { .. } => "IoError",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
