//! Merge weights derived from per-checkpoint training metrics.
//!
//! Every checkpoint `x` gets an unnormalized score `phi_x`, which is then
//! normalized so the weights sum to one:
//!
//! ```text
//! base(x) = 1 / metric_x        (Min objective, e.g. training loss)
//! base(x) = metric_x            (Max objective, e.g. training steps)
//! phi_x   = p^(q^pos(x)) * base(x)
//! w_x     = phi_x / sum_i phi_i
//! ```
//!
//! `pos(x)` is the zero-based rank of the metric from best to worst. With
//! `p = 1` the rank multiplier vanishes and the basic weights are recovered.
//! All arithmetic is done in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default power factor when none is supplied.
pub const DEFAULT_POWER: f64 = 2.0;

/// Whether lower or higher metric values earn larger weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricObjective {
    Min,
    Max,
}

/// The checkpoint metric a weighting is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Loss,
    Steps,
}

impl MetricKind {
    pub fn objective(self) -> MetricObjective {
        match self {
            MetricKind::Loss => MetricObjective::Min,
            MetricKind::Steps => MetricObjective::Max,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Loss => "loss",
            MetricKind::Steps => "steps",
        }
    }
}

/// Penalty and power factors for the rank-dependent multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    pub objective: MetricObjective,
    penalty: f64,
    power: f64,
}

impl WeightScheme {
    /// `penalty` must be positive; values at or above one are allowed
    /// (one disables the rank multiplier, above one inverts it).
    /// `power` must exceed one.
    pub fn new(objective: MetricObjective, penalty: f64, power: f64) -> Result<Self> {
        if !(penalty.is_finite() && penalty > 0.0) {
            return Err(Error::InvalidPenalty(penalty));
        }
        if !(power.is_finite() && power > 1.0) {
            return Err(Error::InvalidPower(power));
        }
        Ok(Self {
            objective,
            penalty,
            power,
        })
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn power(&self) -> f64 {
        self.power
    }
}

/// Normalized merge weights, index-aligned with the checkpoints they weight.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Wraps externally supplied weights after checking they form a convex
    /// combination (entries in `[0, 1]`, sum one within `1e-9`).
    pub fn from_vec(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyWeights);
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "weights must lie in [0, 1] and sum to 1, got {weights:?}"
            )));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for WeightVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Zero-based rank of each metric, best first. Ties keep input order.
pub fn rank_positions(metrics: &[f64], objective: MetricObjective) -> Result<Vec<usize>> {
    if metrics.is_empty() {
        return Err(Error::EmptyMetrics);
    }
    let mut order: Vec<usize> = (0..metrics.len()).collect();
    // sort_by is stable, so equal metrics stay in index order
    order.sort_by(|&a, &b| match objective {
        MetricObjective::Min => metrics[a].total_cmp(&metrics[b]),
        MetricObjective::Max => metrics[b].total_cmp(&metrics[a]),
    });
    let mut ranks = vec![0; metrics.len()];
    for (rank, &index) in order.iter().enumerate() {
        ranks[index] = rank;
    }
    Ok(ranks)
}

fn validate_metrics(metrics: &[f64], objective: MetricObjective) -> Result<()> {
    if metrics.is_empty() {
        return Err(Error::EmptyMetrics);
    }
    for (index, &value) in metrics.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFiniteMetric { index, value });
        }
        match objective {
            MetricObjective::Min if value <= 0.0 => {
                return Err(Error::NonpositiveMinMetric { index, value })
            }
            MetricObjective::Max if value < 0.0 => {
                return Err(Error::NegativeMaxMetric { index, value })
            }
            _ => {}
        }
    }
    if objective == MetricObjective::Max && metrics.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateMaxMetrics);
    }
    Ok(())
}

fn base_score(value: f64, objective: MetricObjective) -> f64 {
    match objective {
        MetricObjective::Min => 1.0 / value,
        MetricObjective::Max => value,
    }
}

fn normalize(phi: Vec<f64>) -> Option<WeightVector> {
    let total: f64 = phi.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return None;
    }
    Some(WeightVector(phi.into_iter().map(|v| v / total).collect()))
}

/// Inverse-metric weights for Min objectives, metric-proportional weights
/// for Max objectives.
pub fn basic_weights(metrics: &[f64], objective: MetricObjective) -> Result<WeightVector> {
    validate_metrics(metrics, objective)?;
    let phi = metrics.iter().map(|&m| base_score(m, objective)).collect();
    normalize(phi).ok_or(Error::DegenerateMaxMetrics)
}

/// Rank-penalized weights: `phi_x = p^(q^pos(x)) * base(x)`, normalized.
pub fn penalized_weights(metrics: &[f64], scheme: &WeightScheme) -> Result<WeightVector> {
    let objective = scheme.objective;
    validate_metrics(metrics, objective)?;
    let ranks = rank_positions(metrics, objective)?;

    let phi: Vec<f64> = metrics
        .iter()
        .zip(&ranks)
        .map(|(&m, &rank)| rank_multiplier(scheme, rank) * base_score(m, objective))
        .collect();
    if let Some(weights) = normalize(phi) {
        return Ok(weights);
    }

    // Penalties above one overflow quickly for deep ranks; redo the
    // normalization in log space.
    let log_phi: Vec<f64> = metrics
        .iter()
        .zip(&ranks)
        .map(|(&m, &rank)| {
            let exponent = scheme.power.powi(rank as i32);
            exponent * scheme.penalty.ln() + base_score(m, objective).ln()
        })
        .collect();
    let peak = log_phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::DegenerateMaxMetrics);
    }
    let phi = log_phi.into_iter().map(|v| (v - peak).exp()).collect();
    normalize(phi).ok_or(Error::DegenerateMaxMetrics)
}

fn rank_multiplier(scheme: &WeightScheme, rank: usize) -> f64 {
    let exponent = scheme.power.powi(rank.min(i32::MAX as usize) as i32);
    scheme.penalty.powf(exponent)
}

/// `n` equal weights of `1/n`.
pub fn uniform_weights(n: usize) -> Result<WeightVector> {
    if n == 0 {
        return Err(Error::EmptyWeights);
    }
    Ok(WeightVector(vec![1.0 / n as f64; n]))
}
