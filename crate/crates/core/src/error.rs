use thiserror::Error;

use crate::model::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no tokens")]
    NoTokens,
    #[error("budget exceeds population: k={k}, n={n}")]
    BudgetExceedsPopulation { k: usize, n: usize },
    #[error("selection budget must be at least 1")]
    ZeroBudget,
    #[error("key vectors have a zero-length head dimension")]
    EmptyHeadDim,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("negative attention weight at head {head}, token {token}")]
    NegativeAttention { head: usize, token: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("budget cannot cover one merged token per cluster: budget={budget}, clusters={clusters}")]
    BudgetBelowClusters { budget: usize, clusters: usize },
    #[error("quota {quota} exceeds cluster size {members}")]
    QuotaExceedsMembers { quota: usize, members: usize },
    #[error("cluster assignment does not cover the token set: {0}")]
    BadAssignment(String),
    #[error("missing {tensor} at layer {layer}")]
    MissingLayer { tensor: &'static str, layer: usize },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Bundle(#[from] BundleError),
}

impl Error {
    /// Short stable code for CLI diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Bundle(b) => b.code(),
            Error::MissingLayer { .. } => "E_MISSING",
            Error::Schedule(_) => "E_SCHEDULE",
            Error::InvalidParameter(_) => "E_PARAM",
            _ => "E_PIPELINE",
        }
    }
}

/// Failures while reading or writing a bundle container. Each variant has a
/// stable short code used in CLI diagnostics.
#[derive(Debug, Error)]
pub enum BundleError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("format version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("header parse error: {0}")]
    Header(String),
    #[error("payload length mismatch: declared {declared}, found {found}")]
    PayloadLength { declared: u64, found: u64 },
    #[error("checksum failure: declared {declared}, computed {computed}")]
    Checksum { declared: String, computed: String },
    #[error("missing required tensor {0}")]
    MissingTensor(String),
    #[error("shape mismatch for {name}: {reason}")]
    ShapeMismatch { name: String, reason: String },
    #[error("bundle failed validation: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("wrong container kind: found {found}, expected {expected}")]
    WrongKind { found: String, expected: &'static str },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl BundleError {
    pub fn code(&self) -> &'static str {
        match self {
            BundleError::BadMagic => "E_MAGIC",
            BundleError::VersionMismatch { .. } => "E_VERSION",
            BundleError::Header(_) => "E_HEADER",
            BundleError::PayloadLength { .. } => "E_LENGTH",
            BundleError::Checksum { .. } => "E_CHECKSUM",
            BundleError::MissingTensor(_) => "E_MISSING",
            BundleError::ShapeMismatch { .. } => "E_SHAPE",
            BundleError::Invalid(_) => "E_INVALID",
            BundleError::WrongKind { .. } => "E_KIND",
            BundleError::Io(_) => "E_IO",
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}
