use std::sync::Arc;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Clone, Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient quadrature: {points} Gauss points per element, at least {required} required")]
    InsufficientQuadrature { points: usize, required: usize },

    #[error("singular system matrix (reciprocal condition estimate {rcond:.3e})")]
    Singular { rcond: f64 },

    #[error("degenerate boundary conditions: {0}")]
    DegenerateBc(String),

    #[error("invalid scale factor {0}")]
    InvalidScale(f64),

    #[error("refinement error: {0}")]
    Refinement(String),

    #[error("non-conforming discretization: {0}")]
    Conformity(String),

    #[error("invalid node pairing: {0}")]
    InvalidPairing(String),

    #[error("singular interface pivot at {interface} (reciprocal condition estimate {rcond:.3e})")]
    MergeSingular { interface: String, rcond: f64 },

    #[error("pairing incomplete: {0}")]
    PairingIncomplete(String),

    #[error("underdetermined problem: {0}")]
    Underdetermined(String),

    #[error("invalid comparison: {0}")]
    InvalidComparison(String),

    #[error("flat reference system is singular (reciprocal condition estimate {rcond:.3e})")]
    FlatSingular { rcond: f64 },

    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("malformed cache file: {0}")]
    CacheFormat(String),

    #[error("i/o error: {0}")]
    Io(Arc<std::io::Error>),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(Arc::new(e))
    }
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } => 2,
            Error::Io(_) | Error::CacheFormat(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
