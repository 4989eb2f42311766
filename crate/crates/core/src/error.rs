use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the crate. Every variant carries enough context to
/// be reported as a single diagnostic line; [`Error::code`] gives a stable
/// machine-greppable code for scripting around the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in `{field}`: expected {expected}, found {found}")]
    DimensionMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid order-{order} correction tuple: {detail}")]
    InvalidTuple { order: usize, detail: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("quartic contract violation: {0}")]
    QuarticContract(String),
    #[error("infeasible generator spec: {0}")]
    InfeasibleSpec(String),
    #[error("unsupported manifest version: expected {expected}, found {found}")]
    ManifestVersion { expected: u32, found: u32 },
    #[error("overlapping sections in manifest: `{first}` and `{second}`")]
    OverlappingSections { first: String, second: String },
    #[error("truncated blob: expected {expected} elements, found {found}")]
    TruncatedBlob { expected: usize, found: usize },
    #[error("data file not found: {0}")]
    DataFileNotFound(PathBuf),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("invalid sidecar: {0}")]
    InvalidSidecar(String),
    #[error("malformed CSV at line {line}: {detail}")]
    Csv { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable diagnostic code, `<category>/<kind>`. Categories: `usage`
    /// (caller misuse), `data` (bad input files or values), `solver`, `io`.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "data/dimension-mismatch",
            Error::InvalidTuple { .. } => "data/invalid-tuple",
            Error::InvalidConfig(_) => "usage/invalid-config",
            Error::QuarticContract(_) => "solver/quartic-contract",
            Error::InfeasibleSpec(_) => "usage/infeasible-spec",
            Error::ManifestVersion { .. } => "data/version-mismatch",
            Error::OverlappingSections { .. } => "data/overlapping-sections",
            Error::TruncatedBlob { .. } => "data/truncated-blob",
            Error::DataFileNotFound(_) => "data/file-not-found",
            Error::InvalidManifest(_) => "data/invalid-manifest",
            Error::InvalidSidecar(_) => "data/invalid-sidecar",
            Error::Csv { .. } => "data/malformed-csv",
            Error::Io(_) => "io/error",
            Error::Json(_) => "data/json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
