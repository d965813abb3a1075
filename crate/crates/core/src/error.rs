use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty point set")]
    EmptyPointSet,

    #[error("empty index set")]
    EmptyIndices,

    #[error("unknown region id {0}")]
    UnknownRegion(u32),

    #[error("oracle requires ground truth")]
    MissingGroundTruth,

    #[error("invalid decomposition: {0}")]
    InvalidDecomposition(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("stale score file: {kind} record {seq} for shape {shape:?} has digest {found}, request digest is {expected}")]
    StaleScoreFile {
        kind: &'static str,
        shape: String,
        seq: u64,
        expected: String,
        found: String,
    },

    #[error("score file underrun: no {kind} record left for shape {shape:?} (request #{index})")]
    ScoreFileUnderrun {
        kind: &'static str,
        shape: String,
        index: usize,
    },

    #[error("invalid operator response: {0}")]
    InvalidResponse(String),

    #[error("{stage} operator failed on region {region}: {source}")]
    Operator {
        stage: &'static str,
        region: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
