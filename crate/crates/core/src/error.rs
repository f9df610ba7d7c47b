use std::path::PathBuf;

use thiserror::Error;

use crate::labels::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),

    #[error("unknown object class `{0}`")]
    UnknownObject(String),

    #[error("invalid label space: {}", format_violations(.0))]
    InvalidLabelSpace(Vec<Violation>),

    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value at index {index}")]
    RejectedValue { index: usize },

    #[error("not a tensor file (bad magic)")]
    NotATensorFile,

    #[error("unsupported tensor version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt tensor: {0}")]
    CorruptTensor(String),

    #[error("missing tensor for sample `{sample_id}`: {}", .path.display())]
    MissingTensor { sample_id: String, path: PathBuf },

    #[error("invalid manifest: {}", format_problems(.0))]
    InvalidManifest(Vec<String>),

    #[error("empty support set")]
    EmptySupport,

    #[error("logits requested but sample has none")]
    MissingLogits,

    #[error("transform requires fitted statistics")]
    MissingStats,

    #[error("instance `{0}` is already in the bag")]
    DuplicateInstance(String),

    #[error("no candidate instances for object `{0}`")]
    NoCandidates(String),

    #[error("instance `{instance}` has no samples in sequence `{sequence}`")]
    IncompleteCoverage { instance: String, sequence: String },

    #[error("object `{object}` has {available} instances, {requested} requested")]
    NotEnoughInstances {
        object: String,
        available: usize,
        requested: usize,
    },

    #[error("split is empty")]
    EmptySplit,

    #[error("relative gain undefined for a zero baseline")]
    UndefinedGain,

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnknownInstance(_) => "UnknownInstance",
            Error::UnknownObject(_) => "UnknownObject",
            Error::InvalidLabelSpace(_) => "InvalidLabelSpace",
            Error::InvalidBox(_) => "InvalidBox",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::RejectedValue { .. } => "RejectedValue",
            Error::NotATensorFile => "NotATensorFile",
            Error::VersionMismatch { .. } => "VersionMismatch",
            Error::CorruptTensor(_) => "CorruptTensor",
            Error::MissingTensor { .. } => "MissingTensor",
            Error::InvalidManifest(_) => "InvalidManifest",
            Error::EmptySupport => "EmptySupport",
            Error::MissingLogits => "MissingLogits",
            Error::MissingStats => "MissingStats",
            Error::DuplicateInstance(_) => "DuplicateInstance",
            Error::NoCandidates(_) => "NoCandidates",
            Error::IncompleteCoverage { .. } => "IncompleteCoverage",
            Error::NotEnoughInstances { .. } => "NotEnoughInstances",
            Error::EmptySplit => "EmptySplit",
            Error::UndefinedGain => "UndefinedGain",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Json(_) => "Json",
            Error::Io { .. } => "Io",
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

fn format_problems(v: &[String]) -> String {
    v.join("; ")
}
