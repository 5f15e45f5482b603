use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("step {step} outside schedule range [0, {total}]")]
    StepOutOfRange { step: usize, total: usize },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("subnetwork {0} is frozen")]
    Frozen(String),

    #[error("{source_name}: row {row}: label {label} out of range for {classes} classes")]
    LabelOutOfRange {
        source_name: String,
        row: usize,
        label: usize,
        classes: usize,
    },

    #[error("{source_name}: {location}: {message}")]
    Parse {
        source_name: String,
        location: String,
        message: String,
    },

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("no candidates to select from")]
    NoCandidates,

    #[error("candidate {arch} diverged at step {step}")]
    Diverged { arch: String, step: usize },

    #[error("iteration {iteration}: every candidate was disqualified")]
    AllDisqualified { iteration: usize },

    #[error("checksum mismatch for member {member} ({path})")]
    Checksum { member: usize, path: PathBuf },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
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
