use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Result};
use crate::subject::SubjectRecord;

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Seeded shuffle, then the first `floor(n × fraction)` indices train.
/// Both halves are returned in ascending order.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(DataError::EmptyInput);
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(DataError::InvalidFraction(train_fraction));
    }
    // the nudge keeps e.g. 0.29 × 100 from flooring to 28
    let n_train = ((n as f64 * train_fraction) + 1e-9).floor() as usize;
    let order = shuffled(n, seed);
    let mut train = order[..n_train.min(n)].to_vec();
    let mut test = order[n_train.min(n)..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split_train_test(
    records: &[SubjectRecord],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<SubjectRecord>, Vec<SubjectRecord>)> {
    if let Some(r) = records.iter().find(|r| !r.is_complete()) {
        return Err(DataError::IncompleteRecord(r.subject_id.clone()));
    }
    let (train, test) = split_indices(records.len(), train_fraction, seed)?;
    Ok((
        train.into_iter().map(|i| records[i].clone()).collect(),
        test.into_iter().map(|i| records[i].clone()).collect(),
    ))
}

/// `k` disjoint folds covering `0..n`. After a seeded shuffle the first
/// `n mod k` folds take one extra element; indices within a fold ascend.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || n < k {
        return Err(DataError::InvalidFolds { k, n });
    }
    let order = shuffled(n, seed);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = order[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(folds)
}

pub fn kfold_split<T: Clone>(records: &[T], k: usize, seed: u64) -> Result<Vec<Vec<T>>> {
    Ok(kfold_indices(records.len(), k, seed)?
        .into_iter()
        .map(|fold| fold.into_iter().map(|i| records[i].clone()).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn paper_split_sizes() {
        let (train, test) = split_indices(1104, 0.8, 3).unwrap();
        assert_eq!((train.len(), test.len()), (883, 221));
        let (train, test) = split_indices(10, 1.0, 3).unwrap();
        assert_eq!((train.len(), test.len()), (10, 0));
        assert_eq!(
            split_indices(1104, 0.8, 3).unwrap(),
            split_indices(1104, 0.8, 3).unwrap()
        );
        assert!(matches!(
            split_indices(0, 0.8, 0),
            Err(DataError::EmptyInput)
        ));
    }

    #[test]
    fn fold_sizes() {
        let sizes = |n, k| -> Vec<usize> {
            kfold_indices(n, k, 1)
                .unwrap()
                .iter()
                .map(Vec::len)
                .collect()
        };
        assert_eq!(sizes(10, 5), vec![2; 5]);
        assert_eq!(sizes(11, 5), vec![3, 2, 2, 2, 2]);
        assert!(matches!(
            kfold_indices(10, 1, 0),
            Err(DataError::InvalidFolds { .. })
        ));
        assert!(kfold_indices(3, 5, 0).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_indices(n in 2usize..300, k in 2usize..12, seed in any::<u64>()) {
            prop_assume!(n >= k);
            let folds = kfold_indices(n, k, seed).unwrap();
            let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let min = folds.iter().map(Vec::len).min().unwrap();
            let max = folds.iter().map(Vec::len).max().unwrap();
            prop_assert!(max - min <= 1);
        }

        #[test]
        fn split_is_disjoint_cover(n in 1usize..500, frac in 0.0f64..=1.0, seed in any::<u64>()) {
            let (train, test) = split_indices(n, frac, seed).unwrap();
            prop_assert_eq!(train.len(), ((n as f64 * frac) + 1e-9).floor() as usize);
            let mut all = train.clone();
            all.extend(&test);
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
