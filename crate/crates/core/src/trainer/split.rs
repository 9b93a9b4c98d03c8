use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Patient-wise partition for one cross-validation fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold_id: usize,
    pub train_patient_ids: Vec<u32>,
    pub val_patient_ids: Vec<u32>,
    pub test_patient_ids: Vec<u32>,
}

/// Shuffles the distinct patients, cuts them into `k` near-equal folds and
/// assigns fold `i` to test, fold `i + 1 mod k` to validation and the rest
/// to training.
pub fn kfold_split(patient_ids: &[u32], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 3 {
        return Err(Error::Config(format!("k-fold split needs k >= 3, got {k}")));
    }
    let mut ids: Vec<u32> = patient_ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if ids.len() < k {
        return Err(Error::Config(format!("{} patients cannot fill {k} folds", ids.len())));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (ids.len() / k, ids.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        let mut f = ids[start..start + len].to_vec();
        f.sort_unstable();
        folds.push(f);
        start += len;
    }
    Ok((0..k)
        .map(|i| {
            let v = (i + 1) % k;
            let mut train: Vec<u32> = (0..k).filter(|&j| j != i && j != v).flat_map(|j| folds[j].clone()).collect();
            train.sort_unstable();
            FoldSplit {
                fold_id: i,
                train_patient_ids: train,
                val_patient_ids: folds[v].clone(),
                test_patient_ids: folds[i].clone(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_patients_five_folds() {
        let ids: Vec<u32> = (100..110).collect();
        let splits = kfold_split(&ids, 5, 4).unwrap();
        assert!(splits.iter().all(|s| s.test_patient_ids.len() == 2));
        let mut tests: Vec<u32> = splits.iter().flat_map(|s| s.test_patient_ids.clone()).collect();
        tests.sort();
        assert_eq!(tests, ids);
        assert_eq!(splits, kfold_split(&ids, 5, 4).unwrap());
    }

    #[test]
    fn too_few_patients() {
        assert!(kfold_split(&[1, 2, 3], 5, 0).is_err());
        assert!(kfold_split(&[1, 1, 2, 2, 3, 3, 4, 4], 5, 0).is_err());
    }
}
