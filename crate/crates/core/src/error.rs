use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("tomography basis {0} has zero total counts")]
    EmptyBasis(char),

    #[error("no detections were recorded for intensity {0}")]
    EmptyIntensity(&'static str),

    #[error("degenerate decoy intensities: {0}")]
    DegenerateIntensities(String),

    #[error("insufficient decoy statistics: single-photon fraction bound is {0}")]
    InsufficientDecoyStatistics(f64),

    #[error("single-photon fraction bound {0} is not below one")]
    ImpossibleBound(f64),

    #[error("measurement branch has probability {0:e}, cannot force outcome")]
    ImpossibleOutcome(f64),

    #[error("channel too lossy for budgets at this grid")]
    Infeasible,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("malformed wire record: {0}")]
    Wire(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
