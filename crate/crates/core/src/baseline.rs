//! Reference merge methods operating on task vectors: Ties, Dare-Ties and
//! per-tensor spherical interpolation.
//!
//! A task vector is a checkpoint minus a base checkpoint. Ties trims each
//! task vector to its largest-magnitude entries, elects a sign per position
//! from the sum of the survivors, and averages only the survivors that
//! agree with the elected sign. Dare randomly drops delta entries and
//! rescales the rest before the Ties step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::merge::validate_alignment;
use crate::tensor::TensorMap;

pub const DEFAULT_DENSITY: f64 = 0.5;
pub const DEFAULT_DROP_RATE: f64 = 0.5;

/// Below this `sin(omega)` interpolation falls back to a straight line.
const SLERP_MIN_SIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseChoice {
    /// First checkpoint of the run.
    First,
    /// Last checkpoint of the run (the final checkpoint).
    Last,
}

impl BaseChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            BaseChoice::First => "first",
            BaseChoice::Last => "last",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiesParams {
    density: f64,
}

impl TiesParams {
    /// `density` is the fraction of entries kept per task vector, in `(0, 1]`.
    pub fn new(density: f64) -> Result<Self> {
        if !(density > 0.0 && density <= 1.0) {
            return Err(Error::InvalidDensity(density));
        }
        Ok(Self { density })
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    /// Number of entries kept out of `n`: `ceil(density * n)`, so at least
    /// one entry survives.
    pub fn keep_count(&self, n: usize) -> usize {
        ((self.density * n as f64).ceil() as usize).clamp(1.min(n), n)
    }
}

impl Default for TiesParams {
    fn default() -> Self {
        Self {
            density: DEFAULT_DENSITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DareParams {
    drop_rate: f64,
    pub seed: u64,
}

impl DareParams {
    pub fn new(drop_rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&drop_rate) {
            return Err(Error::InvalidDropRate(drop_rate));
        }
        Ok(Self { drop_rate, seed })
    }

    pub fn drop_rate(&self) -> f64 {
        self.drop_rate
    }
}

/// A task vector in `f64`, index-aligned with the base tensor names.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector {
    deltas: Vec<(String, Vec<f64>)>,
}

impl TaskVector {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.deltas
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.deltas.iter().map(|(n, d)| (n.as_str(), d.as_slice()))
    }
}

fn aligned_with_base(checkpoints: &[&TensorMap], base: &TensorMap) -> Result<()> {
    let mut all = Vec::with_capacity(checkpoints.len() + 1);
    all.push(base);
    all.extend_from_slice(checkpoints);
    let report = validate_alignment(&all);
    report.ensure_aligned()?;
    if report.common_names.is_empty() {
        return Err(Error::NoCommonTensors);
    }
    Ok(())
}

/// `checkpoint - base` for each checkpoint, elementwise in `f64`.
pub fn task_vectors(checkpoints: &[&TensorMap], base: &TensorMap) -> Result<Vec<TaskVector>> {
    aligned_with_base(checkpoints, base)?;
    Ok(checkpoints
        .iter()
        .map(|checkpoint| TaskVector {
            deltas: base
                .iter()
                .map(|(name, b)| {
                    let b = b.to_f64();
                    let c = checkpoint.get(name).expect("aligned").to_f64();
                    let d = c.iter().zip(&b).map(|(c, b)| c - b).collect();
                    (name.to_owned(), d)
                })
                .collect(),
        })
        .collect())
}

/// Zeroes all but the `keep` largest-magnitude entries. Equal magnitudes
/// keep the earlier position.
pub fn trim_to_top(delta: &mut [f64], keep: usize) {
    if keep >= delta.len() {
        return;
    }
    let mut order: Vec<usize> = (0..delta.len()).collect();
    order.sort_by(|&a, &b| delta[b].abs().total_cmp(&delta[a].abs()));
    for &i in &order[keep..] {
        delta[i] = 0.0;
    }
}

/// Elects a sign from the sum of `values` and returns the mean of the
/// entries carrying that sign. A zero sum elects nothing and yields zero.
pub fn elect_and_average(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let total: f64 = values.clone().sum();
    let sign = if total > 0.0 {
        1.0
    } else if total < 0.0 {
        -1.0
    } else {
        return 0.0;
    };
    let (sum, count) = values
        .filter(|v| *v != 0.0 && v.signum() == sign)
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn ties_from_deltas(
    base: &TensorMap,
    mut deltas: Vec<TaskVector>,
    params: &TiesParams,
) -> Result<TensorMap> {
    for tv in &mut deltas {
        for (_, d) in &mut tv.deltas {
            let keep = params.keep_count(d.len());
            trim_to_top(d, keep);
        }
    }
    let mut out = TensorMap::new();
    for (t, (name, base_tensor)) in base.iter().enumerate() {
        let base_values = base_tensor.to_f64();
        let merged: Vec<f64> = base_values
            .iter()
            .enumerate()
            .map(|(j, b)| b + elect_and_average(deltas.iter().map(|tv| tv.deltas[t].1[j])))
            .collect();
        out.insert(name, base_tensor.with_values(&merged)?)?;
    }
    Ok(out)
}

fn require_pair_or_more(checkpoints: &[&TensorMap]) -> Result<()> {
    if checkpoints.len() < 2 {
        return Err(Error::TooFewCheckpoints {
            required: 2,
            actual: checkpoints.len(),
        });
    }
    Ok(())
}

/// Trim, elect sign, disjoint mean; output is `base + merged delta`.
pub fn ties_merge(checkpoints: &[&TensorMap], base: &TensorMap, params: &TiesParams) -> Result<TensorMap> {
    require_pair_or_more(checkpoints)?;
    let deltas = task_vectors(checkpoints, base)?;
    ties_from_deltas(base, deltas, params)
}

/// Generator for one (checkpoint, tensor) mask. Seeded by hashing the run
/// seed, the checkpoint index and the tensor name, so masks are identical
/// on every machine.
fn dare_rng(seed: u64, checkpoint: usize, name: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((checkpoint as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Drops each entry with probability `drop_rate` and rescales survivors by
/// `1 / (1 - drop_rate)`. Position `j` always consumes the `j`-th draw.
pub fn dare_preprocess(delta: &mut [f64], drop_rate: f64, rng: &mut impl Rng) {
    let scale = 1.0 / (1.0 - drop_rate);
    for d in delta.iter_mut() {
        let u: f64 = rng.random();
        if u < drop_rate {
            *d = 0.0;
        } else {
            *d *= scale;
        }
    }
}

/// Applies the deterministic Dare mask to a set of task vectors.
pub fn dare_task_vectors(deltas: &mut [TaskVector], params: &DareParams) {
    if params.drop_rate == 0.0 {
        return;
    }
    for (i, tv) in deltas.iter_mut().enumerate() {
        for (name, d) in &mut tv.deltas {
            let mut rng = dare_rng(params.seed, i, name);
            dare_preprocess(d, params.drop_rate, &mut rng);
        }
    }
}

/// Dare drop-and-rescale on each task vector, then the Ties merge.
pub fn dare_ties_merge(
    checkpoints: &[&TensorMap],
    base: &TensorMap,
    ties: &TiesParams,
    dare: &DareParams,
) -> Result<TensorMap> {
    require_pair_or_more(checkpoints)?;
    let mut deltas = task_vectors(checkpoints, base)?;
    dare_task_vectors(&mut deltas, dare);
    ties_from_deltas(base, deltas, ties)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlerpOutput {
    pub merged: TensorMap,
    /// Tensors that were linearly interpolated because an input had zero
    /// norm or the two inputs were (anti)parallel.
    pub linear_fallbacks: Vec<String>,
}

/// Spherical interpolation of each flattened tensor pair. `t = 0` yields
/// `a`, `t = 1` yields `b`.
pub fn slerp_merge(a: &TensorMap, b: &TensorMap, t: f64) -> Result<TensorMap> {
    let out = slerp_merge_detailed(a, b, t)?;
    for name in &out.linear_fallbacks {
        log::warn!("slerp: tensor {name:?} is degenerate, interpolating linearly");
    }
    Ok(out.merged)
}

pub fn slerp_merge_detailed(a: &TensorMap, b: &TensorMap, t: f64) -> Result<SlerpOutput> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInterpolation(t));
    }
    validate_alignment(&[a, b]).ensure_aligned()?;
    if t == 0.0 {
        return Ok(SlerpOutput {
            merged: a.clone(),
            linear_fallbacks: vec![],
        });
    }
    if t == 1.0 {
        return Ok(SlerpOutput {
            merged: b.clone(),
            linear_fallbacks: vec![],
        });
    }

    let mut merged = TensorMap::new();
    let mut linear_fallbacks = Vec::new();
    for (name, ta) in a.iter() {
        let u = ta.to_f64();
        let v = b.get(name).expect("aligned").to_f64();
        let values = match slerp_coefficients(&u, &v, t) {
            Some((cu, cv)) => u.iter().zip(&v).map(|(x, y)| cu * x + cv * y).collect::<Vec<_>>(),
            None => {
                linear_fallbacks.push(name.to_owned());
                u.iter().zip(&v).map(|(x, y)| (1.0 - t) * x + t * y).collect()
            }
        };
        merged.insert(name, ta.with_values(&values)?)?;
    }
    Ok(SlerpOutput {
        merged,
        linear_fallbacks,
    })
}

/// `(sin((1-t)w)/sin w, sin(tw)/sin w)`, or `None` when the angle is
/// degenerate.
fn slerp_coefficients(u: &[f64], v: &[f64], t: f64) -> Option<(f64, f64)> {
    let norm_u = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_v = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_u == 0.0 || norm_v == 0.0 {
        return None;
    }
    let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
    let omega = (dot / (norm_u * norm_v)).clamp(-1.0, 1.0).acos();
    let sin_omega = omega.sin();
    if sin_omega < SLERP_MIN_SIN {
        return None;
    }
    Some((
        ((1.0 - t) * omega).sin() / sin_omega,
        (t * omega).sin() / sin_omega,
    ))
}
