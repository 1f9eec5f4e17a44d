use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GcsError>;

#[derive(Debug, Error)]
pub enum GcsError {
    #[error("empty representation set")]
    EmptySet,

    #[error("invalid representation set: {0}")]
    InvalidSet(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("checksum mismatch: manifest records {expected:#010x}, payload hashes to {found:#010x}")]
    ChecksumMismatch { expected: u32, found: u32 },

    #[error("truncated file: needed {needed} bytes, found {found}")]
    Truncated { needed: u64, found: u64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("class {0} is empty")]
    EmptyClass(&'static str),

    #[error("unequal classes: {positives} positives vs {negatives} negatives")]
    UnequalClasses { positives: usize, negatives: usize },

    #[error("degenerate direction")]
    DegenerateDirection,

    #[error("degenerate rank: centered data has rank {0}, need at least 2")]
    DegenerateRank(usize),

    #[error("probe did not converge within {iterations} iterations (gradient norm {gradient_norm:e})")]
    NonConvergence { iterations: u32, gradient_norm: f64 },

    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed manifest {}: {source}", .path.display())]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<GcsError>,
    },
}

impl GcsError {
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            already @ GcsError::Stage { .. } => already,
            other => GcsError::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// The underlying error with any stage tags removed.
    pub fn root(&self) -> &GcsError {
        match self {
            GcsError::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 config, 3 missing input, 4 non-convergence,
    /// 5 I/O, format or data errors.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            GcsError::Config(_) | GcsError::InvalidParameter(_) => 2,
            GcsError::MissingInput(_) => 3,
            GcsError::NonConvergence { .. } => 4,
            _ => 5,
        }
    }
}
