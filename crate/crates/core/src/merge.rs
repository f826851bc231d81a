//! Parameter-wise linear combination of aligned checkpoints.
//!
//! Tensors are combined name by name exactly as stored. For low-rank
//! adapters this means the `A` and `B` factors are averaged independently,
//! which is not the same as averaging their product `BA`.

use std::collections::BTreeSet;

use crate::error::{Error, MismatchReason, Result};
use crate::tensor::{Tensor, TensorMap};
use crate::weighting::WeightVector;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignmentReport {
    /// Names present in every checkpoint with the same shape and dtype.
    pub common_names: BTreeSet<String>,
    pub mismatches: Vec<(String, MismatchReason)>,
}

impl AlignmentReport {
    pub fn is_aligned(&self) -> bool {
        self.mismatches.is_empty()
    }

    /// Errors on the first mismatch.
    pub fn ensure_aligned(&self) -> Result<()> {
        match self.mismatches.first() {
            None => Ok(()),
            Some((name, reason)) => Err(Error::Misaligned {
                name: name.clone(),
                reason: *reason,
            }),
        }
    }
}

/// Compares every checkpoint's tensor table against the union of names.
/// One mismatch is reported per offending name.
pub fn validate_alignment(checkpoints: &[&TensorMap]) -> AlignmentReport {
    let all_names: BTreeSet<&str> = checkpoints.iter().flat_map(|c| c.names()).collect();
    let mut report = AlignmentReport::default();
    'names: for name in all_names {
        let mut reference: Option<&Tensor> = None;
        for (j, checkpoint) in checkpoints.iter().enumerate() {
            let Some(tensor) = checkpoint.get(name) else {
                report
                    .mismatches
                    .push((name.to_owned(), MismatchReason::MissingInCheckpoint(j)));
                continue 'names;
            };
            match reference {
                None => reference = Some(tensor),
                Some(r) if r.shape() != tensor.shape() => {
                    report
                        .mismatches
                        .push((name.to_owned(), MismatchReason::ShapeMismatch));
                    continue 'names;
                }
                Some(r) if r.dtype() != tensor.dtype() => {
                    report
                        .mismatches
                        .push((name.to_owned(), MismatchReason::DtypeMismatch));
                    continue 'names;
                }
                Some(_) => {}
            }
        }
        report.common_names.insert(name.to_owned());
    }
    report
}

/// `out[name][j] = sum_i weights[i] * checkpoints[i][name][j]`, accumulated
/// in `f64` and rounded once to the tensor dtype.
pub fn merge_linear(checkpoints: &[&TensorMap], weights: &WeightVector) -> Result<TensorMap> {
    if checkpoints.len() != weights.len() {
        return Err(Error::LengthMismatch {
            what: "one weight per checkpoint",
            expected: checkpoints.len(),
            actual: weights.len(),
        });
    }
    combine(checkpoints, weights.as_slice())
}

/// Weighted sum without the convexity requirement on `coefficients`.
pub(crate) fn combine(checkpoints: &[&TensorMap], coefficients: &[f64]) -> Result<TensorMap> {
    if checkpoints.is_empty() {
        return Err(Error::TooFewCheckpoints {
            required: 1,
            actual: 0,
        });
    }
    validate_alignment(checkpoints).ensure_aligned()?;

    let mut out = TensorMap::new();
    for (name, first) in checkpoints[0].iter() {
        let mut acc = vec![0.0f64; first.numel()];
        for (checkpoint, &w) in checkpoints.iter().zip(coefficients) {
            let values = checkpoint.get(name).expect("aligned").to_f64();
            for (a, v) in acc.iter_mut().zip(values) {
                *a += w * v;
            }
        }
        out.insert(name, first.with_values(&acc)?)?;
    }
    Ok(out)
}

/// `lambda * a + (1 - lambda) * b`.
pub fn pairwise_merge(a: &TensorMap, b: &TensorMap, lambda: f64) -> Result<TensorMap> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInterpolation(lambda));
    }
    let weights = WeightVector::from_vec(vec![lambda, 1.0 - lambda])?;
    merge_linear(&[a, b], &weights)
}
