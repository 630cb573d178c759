use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, PatchSet};

/// Train/validation/test fractions and the shuffle seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.1,
            val: 0.1,
            test: 0.8,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let fracs = [self.train, self.val, self.test];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(DataError::Contract(format!(
                "split fractions must lie in [0, 1], got {fracs:?}"
            )));
        }
        let total: f64 = fracs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DataError::Contract(format!(
                "split fractions sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Disjoint index lists into a [`PatchSet`], each sorted ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Classes too small to populate every requested split.
    pub warnings: Vec<String>,
}

// ceil(f * n) with slack so that products like 0.7 * 10 do not round up to 8.
fn share(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Per-class stratified split. Each class contributes `ceil(train * n)`
/// samples to train and `ceil(val * n)` to validation (as far as its size
/// allows); the remainder goes to test.
pub fn stratified_split(patches: &PatchSet, spec: &SplitSpec) -> Result<Split, DataError> {
    spec.validate()?;
    let mut by_class: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (i, &label) in patches.center_labels().iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    let requested = [spec.train, spec.val, spec.test].iter().filter(|&&f| f > 0.0).count();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut split = Split::default();
    for (label, mut indices) in by_class {
        let n = indices.len();
        indices.shuffle(&mut rng);
        let n_train = share(spec.train, n).min(n);
        let n_val = share(spec.val, n).min(n - n_train);
        let n_test = n - n_train - n_val;
        let filled = [n_train, n_val, n_test].iter().filter(|&&c| c > 0).count();
        if n < requested || (spec.test > 0.0 && n_test == 0) || filled < requested {
            let msg = format!(
                "class {label} has {n} samples; split {n_train}/{n_val}/{n_test} leaves a requested split empty"
            );
            log::warn!("{msg}");
            split.warnings.push(msg);
        }
        split.train.extend_from_slice(&indices[..n_train]);
        split.val.extend_from_slice(&indices[n_train..n_train + n_val]);
        split.test.extend_from_slice(&indices[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{extract_patches, HsiCube, PatchConfig};
    use proptest::prelude::*;

    fn set(labels: Vec<u16>) -> PatchSet {
        let n = labels.len();
        let cube = HsiCube::with_labels(1, n, 1, vec![0.0; n], labels).unwrap();
        extract_patches(&cube, &PatchConfig::new(1)).unwrap()
    }

    fn spec(train: f64, val: f64, test: f64, seed: u64) -> SplitSpec {
        SplitSpec { train, val, test, seed }
    }

    #[test]
    fn ten_ten_eighty_of_one_hundred() {
        let s = stratified_split(&set(vec![1; 100]), &spec(0.1, 0.1, 0.8, 3)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (10, 10, 80));
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn all_train() {
        let s = stratified_split(&set(vec![1, 2, 2, 3, 1]), &spec(1.0, 0.0, 0.0, 0)).unwrap();
        assert_eq!(s.train, vec![0, 1, 2, 3, 4]);
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn same_seed_same_lists() {
        let labels: Vec<u16> = (0..200).map(|i| (i % 3 + 1) as u16).collect();
        let a = stratified_split(&set(labels.clone()), &spec(0.2, 0.2, 0.6, 42)).unwrap();
        let b = stratified_split(&set(labels), &spec(0.2, 0.2, 0.6, 42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rounding_up_per_class() {
        // 7 of class 1, 13 of class 2 at 10%: ceil gives 1 + 2 train.
        let mut labels = vec![1u16; 7];
        labels.extend(vec![2u16; 13]);
        let s = stratified_split(&set(labels), &spec(0.1, 0.1, 0.8, 1)).unwrap();
        assert_eq!(s.train.len(), 3);
        assert_eq!(s.val.len(), 3);
        assert_eq!(s.test.len(), 14);
    }

    #[test]
    fn tiny_class_warns_without_crashing() {
        let s = stratified_split(&set(vec![1, 2, 2, 2, 2, 2]), &spec(0.4, 0.3, 0.3, 0)).unwrap();
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 6);
        assert!(!s.warnings.is_empty());
    }

    #[test]
    fn bad_fractions_rejected() {
        assert!(stratified_split(&set(vec![1; 4]), &spec(0.5, 0.5, 0.5, 0)).is_err());
        assert!(stratified_split(&set(vec![1; 4]), &spec(-0.1, 0.6, 0.5, 0)).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(
            a in 0.0f64..1.0, b in 0.0f64..1.0, seed in any::<u64>(),
            labels in proptest::collection::vec(1u16..5, 1..120),
        ) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let n = labels.len();
            let s = stratified_split(&set(labels), &spec(lo, hi - lo, 1.0 - hi, seed)).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
