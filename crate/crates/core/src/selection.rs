//! Which checkpoints of a run enter a soup.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One saved checkpoint of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub id: String,
    /// Training steps elapsed at save time.
    pub step: u64,
    pub train_loss: f64,
    /// Location of the tensor container.
    pub path: PathBuf,
}

/// All checkpoints of one run, sorted by strictly increasing step. The last
/// entry is the final checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    checkpoints: Vec<CheckpointRecord>,
}

impl RunManifest {
    /// Sorts the records by step and checks the run invariants.
    pub fn new(mut checkpoints: Vec<CheckpointRecord>) -> Result<Self> {
        if checkpoints.is_empty() {
            return Err(Error::InvalidRun("a run needs at least one checkpoint".into()));
        }
        checkpoints.sort_by_key(|c| c.step);
        for pair in checkpoints.windows(2) {
            if pair[0].step == pair[1].step {
                return Err(Error::InvalidRun(format!(
                    "checkpoints {:?} and {:?} share step {}",
                    pair[0].id, pair[1].id, pair[0].step
                )));
            }
        }
        for c in &checkpoints {
            if !(c.train_loss.is_finite() && c.train_loss > 0.0) {
                return Err(Error::InvalidRun(format!(
                    "checkpoint {:?} has nonpositive loss {}",
                    c.id, c.train_loss
                )));
            }
            if c.step == 0 {
                return Err(Error::InvalidRun(format!("checkpoint {:?} has step 0", c.id)));
            }
        }
        let mut ids: Vec<&str> = checkpoints.iter().map(|c| c.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(dup) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidRun(format!("duplicate checkpoint id {:?}", dup[0])));
        }
        Ok(Self { checkpoints })
    }

    pub fn checkpoints(&self) -> &[CheckpointRecord] {
        &self.checkpoints
    }

    pub fn first_checkpoint(&self) -> &CheckpointRecord {
        &self.checkpoints[0]
    }

    pub fn final_checkpoint(&self) -> &CheckpointRecord {
        self.checkpoints.last().expect("non-empty run")
    }

    /// Every checkpoint except the final one, oldest first.
    pub fn mergeable(&self) -> &[CheckpointRecord] {
        &self.checkpoints[..self.checkpoints.len() - 1]
    }

    /// The newest non-final checkpoint, i.e. the last merging checkpoint of
    /// any `last_k` selection.
    pub fn last_merging_checkpoint(&self) -> Option<&CheckpointRecord> {
        self.mergeable().last()
    }
}

/// `last_k`, optionally taking every `m`-th checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SelectionSpec {
    pub k: u32,
    pub interval: Option<u32>,
}

impl SelectionSpec {
    /// An interval of 1 is the same as no interval and is normalized away.
    pub fn new(k: u32, interval: Option<u32>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidSelection("k must be at least 1".into()));
        }
        let interval = match interval {
            Some(0) => return Err(Error::InvalidSelection("interval must be at least 1".into())),
            Some(1) | None => None,
            Some(m) => Some(m),
        };
        Ok(Self { k, interval })
    }

    pub fn last(k: u32) -> Result<Self> {
        Self::new(k, None)
    }

    pub fn stride(&self) -> usize {
        self.interval.unwrap_or(1) as usize
    }

    /// Non-final checkpoints needed: the oldest selected one sits
    /// `(k - 1) * m` positions behind the newest.
    pub fn required_depth(&self) -> usize {
        (self.k as usize - 1) * self.stride() + 1
    }
}

/// Newest-first selection of non-final checkpoints. The first record
/// returned is the last merging checkpoint.
pub fn select_last_k<'a>(run: &'a RunManifest, spec: &SelectionSpec) -> Result<Vec<&'a CheckpointRecord>> {
    let pool = run.mergeable();
    let required = spec.required_depth();
    if pool.len() < required {
        return Err(Error::InsufficientCheckpoints {
            required,
            available: pool.len(),
        });
    }
    Ok(pool
        .iter()
        .rev()
        .step_by(spec.stride())
        .take(spec.k as usize)
        .collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn uniform_run(count: u64, cadence: u64) -> RunManifest {
        RunManifest::new(
            (1..=count)
                .map(|i| CheckpointRecord {
                    id: format!("checkpoint-{}", i * cadence),
                    step: i * cadence,
                    train_loss: 1.0 / i as f64,
                    path: PathBuf::from(format!("ckpt-{i}.safetensors")),
                })
                .collect(),
        )
        .unwrap()
    }

    fn steps(records: &[&CheckpointRecord]) -> Vec<u64> {
        records.iter().map(|r| r.step).collect()
    }

    #[test]
    fn last_five_excludes_final() {
        let run = uniform_run(10, 10);
        let picked = select_last_k(&run, &SelectionSpec::last(5).unwrap()).unwrap();
        assert_eq!(steps(&picked), vec![90, 80, 70, 60, 50]);
    }

    #[test]
    fn interval_two_anchors_at_newest() {
        let run = uniform_run(10, 10);
        let picked = select_last_k(&run, &SelectionSpec::new(3, Some(2)).unwrap()).unwrap();
        assert_eq!(steps(&picked), vec![90, 70, 50]);
        let picked = select_last_k(&run, &SelectionSpec::new(5, Some(2)).unwrap()).unwrap();
        assert_eq!(steps(&picked), vec![90, 70, 50, 30, 10]);
    }

    #[test]
    fn single_is_last_merging_checkpoint() {
        let run = uniform_run(10, 10);
        let picked = select_last_k(&run, &SelectionSpec::last(1).unwrap()).unwrap();
        assert_eq!(picked[0], run.last_merging_checkpoint().unwrap());
    }

    #[test]
    fn insufficient_depth_reports_counts() {
        let run = uniform_run(5, 10);
        match select_last_k(&run, &SelectionSpec::last(10).unwrap()) {
            Err(Error::InsufficientCheckpoints { required, available }) => {
                assert_eq!((required, available), (10, 4));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(select_last_k(&run, &SelectionSpec::new(3, Some(2)).unwrap()).is_err());
    }

    #[test]
    fn unit_interval_is_no_interval() {
        assert_eq!(
            SelectionSpec::new(4, Some(1)).unwrap(),
            SelectionSpec::last(4).unwrap()
        );
        assert!(SelectionSpec::new(0, None).is_err());
        assert!(SelectionSpec::new(2, Some(0)).is_err());
    }

    #[test]
    fn run_invariants() {
        let rec = |id: &str, step, loss| CheckpointRecord {
            id: id.into(),
            step,
            train_loss: loss,
            path: PathBuf::new(),
        };
        assert!(RunManifest::new(vec![]).is_err());
        assert!(RunManifest::new(vec![rec("a", 1, 1.0), rec("b", 1, 1.0)]).is_err());
        assert!(RunManifest::new(vec![rec("a", 1, 1.0), rec("a", 2, 1.0)]).is_err());
        assert!(RunManifest::new(vec![rec("a", 1, 0.0)]).is_err());
        let run = RunManifest::new(vec![rec("b", 20, 1.0), rec("a", 10, 1.0)]).unwrap();
        assert_eq!(run.final_checkpoint().id, "b");
        assert_eq!(run.first_checkpoint().id, "a");
    }

    proptest! {
        #[test]
        fn selection_count_order_and_exclusion(
            count in 2u64..40,
            cadence in 1u64..500,
            k in 1u32..12,
            m in 1u32..5,
        ) {
            let run = uniform_run(count, cadence);
            let spec = SelectionSpec::new(k, Some(m)).unwrap();
            match select_last_k(&run, &spec) {
                Ok(picked) => {
                    prop_assert_eq!(picked.len(), k as usize);
                    prop_assert!(picked.iter().all(|r| r.step != run.final_checkpoint().step));
                    for pair in picked.windows(2) {
                        prop_assert_eq!(pair[0].step - pair[1].step, m as u64 * cadence);
                    }
                }
                Err(Error::InsufficientCheckpoints { required, available }) => {
                    prop_assert!(available < required);
                    prop_assert_eq!(available as u64, count - 1);
                }
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
