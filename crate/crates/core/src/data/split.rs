//! Stratified within-subject k-fold assignment.
//!
//! Folds must be drawn within each (subject, class) cell: the multi-task
//! network has one head per subject, so every subject has to appear in the
//! training partition of every fold.

use super::{ClassLabel, DataError, Dataset, FoldAssignment};
use crate::seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Splits every (subject, class) cell across the `k` folds: seeded shuffle,
/// then round-robin, so cell remainders land on the lowest-index folds.
pub fn kfold_split(ds: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment, DataError> {
    if k < 2 {
        return Err(DataError::InvalidK(k));
    }

    let mut cells: BTreeMap<(String, ClassLabel), Vec<usize>> = BTreeMap::new();
    for (i, sample) in ds.samples().iter().enumerate() {
        cells
            .entry((sample.subject_id.clone(), sample.label))
            .or_default()
            .push(i);
    }

    for ((subject, label), members) in &cells {
        if members.len() < k {
            return Err(DataError::TooFewSamples {
                subject: subject.clone(),
                label: *label,
                count: members.len(),
                k,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "kfold", 0));
    let mut fold_of_sample = vec![0usize; ds.len()];
    for members in cells.values() {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        for (j, &sample_idx) in shuffled.iter().enumerate() {
            fold_of_sample[sample_idx] = j % k;
        }
    }
    Ok(FoldAssignment::new(k, fold_of_sample))
}
