use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;

/// Train/test split and flat k-fold settings.
///
/// `seeds.0` drives the split and the fold assignment; `seeds.1` is reserved
/// for estimator jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub test_fraction: f64,
    pub folds: usize,
    pub seeds: (u64, u64),
    pub stratified: bool,
}

impl Default for CvPlan {
    fn default() -> Self {
        CvPlan {
            test_fraction: 0.2,
            folds: 5,
            seeds: (278_797_835, 424_989),
            stratified: true,
        }
    }
}

impl CvPlan {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(EvalError::BadPlan("test_fraction must be in (0, 1)"));
        }
        if self.folds < 2 {
            return Err(EvalError::BadPlan("folds must be at least 2"));
        }
        Ok(())
    }
}

const SPLIT_STREAM: u64 = 0;
const FOLD_STREAM: u64 = 1;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn class_indices(labels: &[bool]) -> [Vec<usize>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        out[usize::from(l)].push(i);
    }
    out
}

/// Seeded train/test split; returns ascending (train, test) row indices.
///
/// When stratified, each class contributes `round(size * test_fraction)` test
/// rows and must keep at least one row on each side.
pub fn split_train_test(labels: &[bool], plan: &CvPlan) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    plan.validate()?;
    let mut rng = rng(plan.seeds.0, SPLIT_STREAM);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let groups: Vec<Vec<usize>> = if plan.stratified {
        class_indices(labels).into_iter().collect()
    } else {
        vec![(0..labels.len()).collect()]
    };
    for (g, mut members) in groups.into_iter().enumerate() {
        let n_test = (members.len() as f64 * plan.test_fraction).round() as usize;
        if plan.stratified && (n_test == 0 || n_test == members.len()) {
            return Err(EvalError::TooFewPerClass {
                label: g == 1,
                found: members.len(),
                needed: 2,
            });
        }
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Seeded k-fold partition of `0..labels.len()`; each fold's indices ascending.
///
/// Stratified folds deal each class round-robin, continuing the rotation
/// across classes, so fold sizes and per-fold positives differ by at most one.
pub fn stratified_folds(labels: &[bool], plan: &CvPlan) -> Result<Vec<Vec<usize>>, EvalError> {
    plan.validate()?;
    let mut rng = rng(plan.seeds.0, FOLD_STREAM);
    let groups: Vec<Vec<usize>> = if plan.stratified {
        let groups = class_indices(labels);
        for (g, members) in groups.iter().enumerate() {
            if members.len() < plan.folds {
                return Err(EvalError::TooFewPerClass {
                    label: g == 1,
                    found: members.len(),
                    needed: plan.folds,
                });
            }
        }
        groups.into_iter().collect()
    } else {
        if labels.len() < plan.folds {
            return Err(EvalError::BadPlan("fewer rows than folds"));
        }
        vec![(0..labels.len()).collect()]
    };
    let mut folds = vec![Vec::new(); plan.folds];
    let mut slot = 0;
    for mut members in groups {
        members.shuffle(&mut rng);
        for i in members {
            folds[slot % plan.folds].push(i);
            slot += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}
