use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("no records")]
    NoRecords,
    #[error("patient {0} has both MSI and MSS tiles")]
    InconsistentPatient(String),
    #[error("duplicate tile id {0}")]
    DuplicateTile(String),
    #[error("tile file missing at row {row}: {path}")]
    MissingTile { row: usize, path: PathBuf },
    #[error("class {0} has no records")]
    MissingClass(&'static str),
    #[error("too few patients: {0}")]
    TooFewPatients(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("singular stain basis (condition number {0})")]
    SingularBasis(f64),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("unknown feature {0}")]
    UnknownFeature(String),
    #[error("feature vector has length {got}, catalog expects {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("corrupt model payload: {0}")]
    CorruptModel(String),
    #[error("catalog digest mismatch: model {model}, catalog {catalog}")]
    CatalogMismatch { model: String, catalog: String },
    #[error("unknown tile id {0}")]
    UnknownTile(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
