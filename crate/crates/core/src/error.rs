use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("utterance `{id}`: audio file {path} does not exist")]
    MissingFile { id: String, path: PathBuf },

    #[error("utterance `{utterance}`: word `{word}` is not in the lexicon")]
    UnknownWord { word: String, utterance: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what}: expected dimension {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what}: bad magic (expected `{expected}`)")]
    BadMagic {
        what: String,
        expected: &'static str,
    },

    #[error("{what}: unsupported format version {found} (expected {expected})")]
    Version {
        what: String,
        found: u32,
        expected: u32,
    },

    #[error("utterance `{utterance}` has {frames} frames, needs at least {needed}")]
    TooShort {
        utterance: String,
        frames: usize,
        needed: usize,
    },

    #[error("no path with finite score reaches frame {frame}")]
    NoPath { frame: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("requested {requested} components but data rank is {achievable}")]
    Rank { requested: usize, achievable: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("audio: {0}")]
    Wav(#[from] hound::Error),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
