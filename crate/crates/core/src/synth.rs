//! Synthetic training runs: noisy SGD on a diagonal quadratic.
//!
//! The landscape is `L(x) = 0.5 * x^T H x` with `H = diag(lambda_i)` and
//! eigenvalues log-spaced over `[1, condition_number]`. Each step applies
//! `x <- x - lr * (H x + xi)` with `xi ~ N(0, noise_std^2 I)`. The start
//! point is drawn from `N(0, I)`. Everything is determined by the seed.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::container::{write_container, ContentDigest};
use crate::io::manifest::{write_run_file, RunFile, RunFileEntry};
use crate::io::metrics_log::{write_metrics_log, MetricsLog, MetricsRow};
use crate::pipeline::{Candidate, Evaluator, Orientation};
use crate::selection::{CheckpointRecord, RunManifest};
use crate::tensor::{Tensor, TensorMap};

pub const THETA: &str = "theta";
pub const RUN_FILE: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.jsonl";

/// Shape of the quadratic bowl.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Landscape {
    pub dimension: usize,
    pub condition_number: f64,
}

impl Landscape {
    pub fn new(dimension: usize, condition_number: f64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidConfig("dimension must be positive".into()));
        }
        if !(condition_number.is_finite() && condition_number >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "condition number {condition_number} must be >= 1"
            )));
        }
        Ok(Self {
            dimension,
            condition_number,
        })
    }

    /// Diagonal of `H`, ascending from 1 to `condition_number`.
    pub fn curvature(&self) -> Vec<f64> {
        if self.dimension == 1 {
            return vec![1.0];
        }
        let top = (self.dimension - 1) as f64;
        (0..self.dimension)
            .map(|i| self.condition_number.powf(i as f64 / top))
            .collect()
    }

    pub fn loss(&self, x: &[f64]) -> f64 {
        0.5 * self
            .curvature()
            .iter()
            .zip(x)
            .map(|(h, v)| h * v * v)
            .sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub dimension: usize,
    pub condition_number: f64,
    pub noise_std: f64,
    pub learning_rate: f64,
    pub total_steps: u64,
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            dimension: 64,
            condition_number: 100.0,
            noise_std: 0.05,
            learning_rate: 0.01,
            total_steps: 2000,
            checkpoint_every: 100,
            seed: 0,
        }
    }
}

impl TrajectoryConfig {
    pub fn landscape(&self) -> Result<Landscape> {
        Landscape::new(self.dimension, self.condition_number)
    }

    pub fn validate(&self) -> Result<Landscape> {
        let landscape = self.landscape()?;
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise_std {} must be nonnegative",
                self.noise_std
            )));
        }
        if self.total_steps == 0 || self.checkpoint_every == 0 {
            return Err(Error::InvalidConfig("steps and cadence must be positive".into()));
        }
        if self.checkpoint_every > self.total_steps {
            return Err(Error::InvalidConfig(format!(
                "checkpoint_every {} exceeds total_steps {}",
                self.checkpoint_every, self.total_steps
            )));
        }
        // largest eigenvalue is the condition number
        let limit = 2.0 / self.condition_number;
        if !(self.learning_rate > 0.0 && self.learning_rate < limit) {
            return Err(Error::UnstableLearningRate {
                learning_rate: self.learning_rate,
                limit,
            });
        }
        Ok(landscape)
    }

    /// Steps at which checkpoints are saved: every multiple of the cadence,
    /// plus the last step when it is not a multiple.
    pub fn save_steps(&self) -> Vec<u64> {
        let mut steps: Vec<u64> = (1..=self.total_steps / self.checkpoint_every)
            .map(|i| i * self.checkpoint_every)
            .collect();
        if !self.total_steps.is_multiple_of(self.checkpoint_every) {
            steps.push(self.total_steps);
        }
        steps
    }
}

/// One saved iterate, already rounded to `f32` storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: u64,
    pub theta: Vec<f32>,
    /// Loss of the stored (rounded) parameters.
    pub loss: f64,
}

impl Snapshot {
    pub fn checkpoint_id(&self) -> String {
        format!("checkpoint-{}", self.step)
    }

    pub fn tensors(&self) -> TensorMap {
        let mut map = TensorMap::new();
        let tensor = Tensor::from_f32(vec![self.theta.len()], &self.theta).expect("shape matches");
        map.insert(THETA, tensor).expect("non-empty name");
        map
    }
}

/// Runs the simulation in memory.
pub fn simulate(config: &TrajectoryConfig) -> Result<Vec<Snapshot>> {
    let landscape = config.validate()?;
    let curvature = landscape.curvature();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_std)
        .map_err(|e| Error::InvalidConfig(format!("noise: {e}")))?;

    let mut x: Vec<f64> = (0..config.dimension)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let saves = config.save_steps();
    let mut snapshots = Vec::with_capacity(saves.len());
    let mut next_save = saves.iter().peekable();
    for step in 1..=config.total_steps {
        for (xi, h) in x.iter_mut().zip(&curvature) {
            let grad = h * *xi + noise.sample(&mut rng);
            *xi -= config.learning_rate * grad;
        }
        if next_save.peek() == Some(&&step) {
            next_save.next();
            let theta: Vec<f32> = x.iter().map(|&v| v as f32).collect();
            let stored: Vec<f64> = theta.iter().map(|&v| v as f64).collect();
            snapshots.push(Snapshot {
                step,
                theta,
                loss: landscape.loss(&stored),
            });
        }
    }
    Ok(snapshots)
}

#[derive(Debug, Clone)]
pub struct GeneratedRun {
    pub run: RunManifest,
    pub metrics: MetricsLog,
    pub landscape: Landscape,
    pub run_file: PathBuf,
    pub metrics_file: PathBuf,
    pub digests: Vec<ContentDigest>,
}

/// Simulates a run and writes `run.json`, `metrics.jsonl` and one container
/// per checkpoint under `out_dir/checkpoints/`.
pub fn generate_trajectory(config: &TrajectoryConfig, out_dir: impl AsRef<Path>) -> Result<GeneratedRun> {
    let out_dir = out_dir.as_ref();
    let landscape = config.validate()?;
    let snapshots = simulate(config)?;

    let checkpoint_dir = out_dir.join("checkpoints");
    std::fs::create_dir_all(&checkpoint_dir).map_err(|e| Error::io(&checkpoint_dir, e))?;

    let mut entries = Vec::with_capacity(snapshots.len());
    let mut records = Vec::with_capacity(snapshots.len());
    let mut rows = Vec::with_capacity(snapshots.len());
    let mut digests = Vec::with_capacity(snapshots.len());
    for snap in &snapshots {
        let id = snap.checkpoint_id();
        let relative = PathBuf::from("checkpoints").join(format!("{id}.safetensors"));
        digests.push(write_container(&snap.tensors(), out_dir.join(&relative))?);
        entries.push(RunFileEntry {
            id: id.clone(),
            step: snap.step,
            train_loss: Some(snap.loss),
            path: relative.clone(),
        });
        records.push(CheckpointRecord {
            id: id.clone(),
            step: snap.step,
            train_loss: snap.loss,
            path: out_dir.join(&relative),
        });
        rows.push(MetricsRow {
            checkpoint_id: id,
            step: snap.step,
            train_loss: snap.loss,
        });
    }

    let metrics = MetricsLog { rows };
    let metrics_file = out_dir.join(METRICS_FILE);
    write_metrics_log(&metrics, &metrics_file)?;
    let run_file = out_dir.join(RUN_FILE);
    write_run_file(
        &RunFile {
            checkpoints: entries,
            landscape: Some(landscape),
        },
        &run_file,
    )?;

    Ok(GeneratedRun {
        run: RunManifest::new(records)?,
        metrics,
        landscape,
        run_file,
        metrics_file,
        digests,
    })
}

/// Scores parameters by their loss on a known landscape (lower is better).
#[derive(Debug, Clone)]
pub struct SyntheticEvaluator {
    landscape: Landscape,
    curvature: Vec<f64>,
}

impl SyntheticEvaluator {
    pub fn new(landscape: Landscape) -> Self {
        Self {
            curvature: landscape.curvature(),
            landscape,
        }
    }

    pub fn landscape(&self) -> &Landscape {
        &self.landscape
    }

    /// `0.5 * theta^T H theta` for the `"theta"` tensor.
    pub fn synthetic_score(&self, map: &TensorMap) -> Result<f64> {
        let theta = map.get(THETA).ok_or_else(|| Error::InvalidTensor {
            name: THETA.into(),
            reason: "missing".into(),
        })?;
        if theta.shape() != [self.landscape.dimension] {
            return Err(Error::InvalidTensor {
                name: THETA.into(),
                reason: format!(
                    "shape {:?}, expected [{}]",
                    theta.shape(),
                    self.landscape.dimension
                ),
            });
        }
        Ok(0.5
            * theta
                .to_f64()
                .iter()
                .zip(&self.curvature)
                .map(|(v, h)| h * v * v)
                .sum::<f64>())
    }
}

impl Evaluator for SyntheticEvaluator {
    fn score(&self, candidate: &Candidate<'_>) -> Result<f64> {
        self.synthetic_score(candidate.tensors)
    }

    fn orientation(&self) -> Orientation {
        Orientation::LowerIsBetter
    }

    fn describe(&self) -> String {
        format!(
            "synthetic(dimension={}, condition_number={})",
            self.landscape.dimension, self.landscape.condition_number
        )
    }
}
