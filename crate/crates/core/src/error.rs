use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0} is not prime")]
    NotPrime(u64),
    #[error("modulus {0} exceeds the supported range (p < 2^31)")]
    ModulusTooLarge(u64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("modulus mismatch: {left} vs {right}")]
    ModulusMismatch { left: u64, right: u64 },
    #[error("matrix dimension {0} is outside the supported range 1..=4")]
    UnsupportedDimension(usize),
    #[error("matrix is singular")]
    Singular,
    #[error("{0}")]
    MembershipViolation(String),
    #[error("{0} is not a unit modulo {1}")]
    NotAUnit(i64, u64),
    #[error("integer overflow computing {0}")]
    Overflow(&'static str),
    #[error("enumeration of {size} elements exceeds the desk-scale limit {limit}; pass the override flag to run anyway")]
    DeskScaleExceeded { size: u128, limit: u64 },
    #[error("{count} frequency vectors exceed the configured cap {cap}")]
    CombinatorialBlowup { count: u128, cap: u64 },
    #[error("h-vector violates the SL2 identity conditions: {0}")]
    ConditionViolated(String),
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}
