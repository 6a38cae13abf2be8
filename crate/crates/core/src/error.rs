use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("qubit count mismatch: {left} vs {right}")]
    QubitMismatch { left: usize, right: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{n} qubits exceeds the cap of {cap}")]
    TooManyQubits { n: usize, cap: usize },

    #[error("result is not Hermitian: imaginary coefficient {imag:e} on {string}")]
    NonHermitian { string: String, imag: f64 },

    #[error("identity generator has no effect beyond a global phase")]
    IdentityGenerator,

    #[error("state is not normalized: |psi|^2 = {norm_sqr}")]
    NotNormalized { norm_sqr: f64 },

    #[error("cannot parse Pauli string {0:?}")]
    ParsePauli(String),

    #[error("invalid spin-1 string {0:?}: expected characters 0, 1, 2")]
    InvalidSpinString(String),

    #[error("invalid bitstring {0:?}")]
    InvalidBitstring(String),

    #[error("unknown {kind} {value:?}")]
    UnknownName { kind: &'static str, value: String },

    #[error("site {site} out of range 1..={len}")]
    SiteOutOfRange { site: usize, len: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("no sign change of {what} on the scanned grid")]
    NoBracket { what: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
