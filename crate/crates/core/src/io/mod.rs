//! Tensor containers, metrics logs and manifests.

pub mod container;
pub mod manifest;
pub mod metrics_log;

pub use container::{
    decode_container, encode_container, read_container, write_container, ContainerError,
    ContentDigest,
};
pub use manifest::{load_run, LoadedRun, MergeManifest, RunFile, RunFileEntry};
pub use metrics_log::{parse_metrics_log, read_metrics_log, write_metrics_log, MetricsLog, MetricsRow};
