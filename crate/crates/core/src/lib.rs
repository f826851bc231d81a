//! Merging of checkpoints from a single training run.
//!
//! Checkpoints are combined parameter by parameter with weights derived
//! from their training metrics (loss or step count), with uniform soups,
//! Ties, Dare-Ties and SLERP available as reference methods. A synthetic
//! quadratic-landscape harness produces checkpoint streams for end-to-end
//! checks without any real training.

pub mod baseline;
pub mod error;
pub mod io;
pub mod merge;
pub mod naming;
pub mod pipeline;
pub mod selection;
pub mod synth;
pub mod tensor;
pub mod weighting;

pub use error::{Error, Result};
pub use merge::{merge_linear, pairwise_merge, validate_alignment, AlignmentReport};
pub use naming::{format_name, parse_model_name, parse_name, MergeName, ModelName, SoupScheme};
pub use selection::{select_last_k, CheckpointRecord, RunManifest, SelectionSpec};
pub use tensor::{DType, Tensor, TensorMap};
pub use weighting::{
    basic_weights, penalized_weights, rank_positions, uniform_weights, MetricKind, MetricObjective,
    WeightScheme, WeightVector,
};
