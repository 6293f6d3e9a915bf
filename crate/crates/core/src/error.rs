use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {what}: {msg}")]
    Parse { what: String, msg: String },
    #[error("empty mesh")]
    EmptyMesh,
    #[error("edge ({0}, {1}) has no dihedral angle (boundary edge)")]
    NoDihedral(usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("negative entry in input matrix for view {view}")]
    NegativeInput { view: usize },
    #[error("degenerate basis: W is all zero")]
    DegenerateBasis,
    #[error("constraint pair ({0}, {1}) is both must-link and cannot-link")]
    ConflictingConstraint(usize, usize),
    #[error("unachievable target: {0}")]
    Unachievable(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(what: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            msg: msg.into(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
