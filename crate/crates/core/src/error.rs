use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing manifest at {0}")]
    MissingManifest(PathBuf),

    #[error("missing mel data for track {track_id} ({path})")]
    MissingMel { track_id: u32, path: PathBuf },

    #[error("malformed corpus: {0}")]
    Format(String),

    #[error("dangling reference: playlist {playlist_id} names unknown track {track_id}")]
    DanglingReference { playlist_id: u32, track_id: u32 },

    #[error("genre id {genre_id} outside vocabulary")]
    GenreOutOfVocab { genre_id: u32 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("backward called without a cached forward pass")]
    MissingCache,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
