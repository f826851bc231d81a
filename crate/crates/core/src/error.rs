use std::path::PathBuf;

use thiserror::Error;

use crate::io::container::ContainerError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Why a tensor could not be aligned across checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MismatchReason {
    /// The tensor is absent from the checkpoint at this index.
    MissingInCheckpoint(usize),
    ShapeMismatch,
    DtypeMismatch,
}

impl std::fmt::Display for MismatchReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MismatchReason::MissingInCheckpoint(j) => write!(f, "missing-in-checkpoint-{j}"),
            MismatchReason::ShapeMismatch => f.write_str("shape-mismatch"),
            MismatchReason::DtypeMismatch => f.write_str("dtype-mismatch"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty metric vector")]
    EmptyMetrics,
    #[error("nonpositive Min-objective metric {value} at index {index}")]
    NonpositiveMinMetric { index: usize, value: f64 },
    #[error("negative Max-objective metric {value} at index {index}")]
    NegativeMaxMetric { index: usize, value: f64 },
    #[error("non-finite metric {value} at index {index}")]
    NonFiniteMetric { index: usize, value: f64 },
    #[error("degenerate Max metrics: every value is zero")]
    DegenerateMaxMetrics,
    #[error("invalid penalty factor {0}: must be finite and > 0")]
    InvalidPenalty(f64),
    #[error("invalid power factor {0}: must be finite and > 1")]
    InvalidPower(f64),
    #[error("weight vector must be non-empty")]
    EmptyWeights,

    #[error("{what}: expected {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("tensor {name:?} is misaligned: {reason}")]
    Misaligned { name: String, reason: MismatchReason },
    #[error("no tensors are common to every checkpoint")]
    NoCommonTensors,
    #[error("at least {required} checkpoints required, got {actual}")]
    TooFewCheckpoints { required: usize, actual: usize },
    #[error("interpolation factor {0} outside [0, 1]")]
    InvalidInterpolation(f64),
    #[error("density {0} outside (0, 1]")]
    InvalidDensity(f64),
    #[error("drop rate {0} outside [0, 1)")]
    InvalidDropRate(f64),
    #[error("invalid tensor {name:?}: {reason}")]
    InvalidTensor { name: String, reason: String },

    #[error("invalid selection: {0}")]
    InvalidSelection(String),
    #[error("insufficient checkpoints: selection needs {required} non-final checkpoints, run has {available}")]
    InsufficientCheckpoints { required: usize, available: usize },
    #[error("invalid run: {0}")]
    InvalidRun(String),
    #[error("malformed merge name at byte {position}: {reason}")]
    MalformedName { position: usize, reason: String },

    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("metrics log line {line}: {reason}")]
    MetricsLog { line: usize, reason: String },
    #[error("invalid manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("evaluator failed: {0}")]
    Evaluator(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unstable learning rate {learning_rate}: must be below 2/lambda_max = {limit}")]
    UnstableLearningRate { learning_rate: f64, limit: f64 },
    #[error("initial validation failed: {0}")]
    ValidationGate(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the filesystem or of an external process, as
    /// opposed to invalid input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
