use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("degenerate band [{a}, {b}]: band mass {mass} leaves nothing outside")]
    DegenerateBand { a: f64, b: f64, mass: f64 },

    #[error("inadmissible band at epsilon={epsilon}: {violated} = {value} < epsilon")]
    InadmissibleBand {
        epsilon: f64,
        violated: &'static str,
        value: f64,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate covariance: largest eigenvalue {0} is not positive")]
    DegenerateCovariance(f64),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("reweighting exponent alpha={0} must be non-positive")]
    PositiveAlpha(f64),

    #[error("every candidate direction is flagged (zero norm)")]
    NoCandidate,

    #[error("zero vector where a direction was expected")]
    ZeroVector,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
