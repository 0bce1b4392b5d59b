use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
///
/// Every variant maps to a distinct CLI exit code through [`Error::exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("empty stream: {0}")]
    EmptyStream(String),
    #[error("channel error: {0}")]
    Channel(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("undefined normalization: {0}")]
    UndefinedNormalization(String),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no zero-phonon line found: {0}")]
    NoZpl(String),
    #[error("spectral coverage error: {0}")]
    Coverage(String),
    #[error("insufficient population: {0}")]
    InsufficientPopulation(String),
    #[error("collection-efficiency model has no entry for {0} nm")]
    ModelCoverage(u32),
    #[error("format error: {0}")]
    Format(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("unit error: {0}")]
    Unit(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class. Zero is never returned.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) => 10,
            Error::EmptyStream(_) => 11,
            Error::Channel(_) => 12,
            Error::Config(_) => 13,
            Error::UndefinedNormalization(_) => 14,
            Error::DegenerateFit(_) => 15,
            Error::InsufficientData(_) => 16,
            Error::NoZpl(_) => 17,
            Error::Coverage(_) => 18,
            Error::InsufficientPopulation(_) => 19,
            Error::ModelCoverage(_) => 20,
            Error::Format(_) => 21,
            Error::Integrity(_) => 22,
            Error::Unit(_) => 23,
            Error::Io { .. } => 24,
        }
    }
}
