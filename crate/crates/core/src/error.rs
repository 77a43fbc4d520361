use std::path::PathBuf;

use thiserror::Error;

use crate::ingest::TileId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unreadable input stream: {0}")]
    Stream(#[from] std::io::Error),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("point ({lon}, {lat}) lies outside the bounding box")]
    OutOfRange { lon: f64, lat: f64 },

    #[error("network is empty after filtering")]
    EmptyNetwork,

    #[error("network has zero total edge weight")]
    ZeroWeight,

    #[error("tile {0} has no community assignment")]
    Unassigned(TileId),

    #[error("vector has zero norm; similarity undefined")]
    ZeroVector,

    #[error("degenerate marginals: community {0} has no incoming mass from other communities")]
    DegenerateMarginals(usize),

    #[error("at least {needed} communities required, got {got}")]
    TooFewCommunities { needed: usize, got: usize },

    #[error(
        "polarity cell ({from}, {to}) is undefined; restrict to a fully defined submatrix first"
    )]
    MissingCell { from: usize, to: usize },

    #[error("invalid lexicon line {line}: {reason}")]
    Lexicon { line: usize, reason: String },

    #[error("invalid synthetic config: {}", .0.join("; "))]
    SynthConfig(Vec<String>),

    #[error("invalid pipeline config: {0}")]
    Config(String),

    #[error("missing intermediate {path}: run stage `{stage}` first")]
    Prerequisite { stage: &'static str, path: PathBuf },

    #[error("intermediate {path} has format version {found}, expected {expected}")]
    FormatVersion {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
