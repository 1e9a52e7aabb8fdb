//! Clustering agreement: adjusted Rand index.

use std::collections::HashMap;
use std::hash::Hash;

/// Adjusted Rand index between two labelings of the same items, computed
/// from the pair confusion matrix. Identical partitions (including the
/// all-in-one and all-singleton cases) score exactly 1.
pub fn adjusted_rand_index<A: Eq + Hash + Copy, B: Eq + Hash + Copy>(truth: &[A], pred: &[B]) -> f64 {
    assert_eq!(truth.len(), pred.len(), "labelings differ in length");
    let n = truth.len() as f64;
    let mut joint: HashMap<(A, B), f64> = HashMap::new();
    let mut rows: HashMap<A, f64> = HashMap::new();
    let mut cols: HashMap<B, f64> = HashMap::new();
    for (&a, &b) in truth.iter().zip(pred) {
        *joint.entry((a, b)).or_default() += 1.0;
        *rows.entry(a).or_default() += 1.0;
        *cols.entry(b).or_default() += 1.0;
    }
    let sum_sq = |it: &mut dyn Iterator<Item = f64>| it.map(|c| c * c).sum::<f64>();
    let sum_joint = sum_sq(&mut joint.values().copied());
    let sum_rows = sum_sq(&mut rows.values().copied());
    let sum_cols = sum_sq(&mut cols.values().copied());
    let tp = sum_joint - n;
    let fp = sum_cols - sum_joint;
    let fn_ = sum_rows - sum_joint;
    let tn = n * n - fp - fn_ - sum_joint;
    if fn_ == 0.0 && fp == 0.0 {
        return 1.0;
    }
    2.0 * (tp * tn - fn_ * fp) / ((tp + fn_) * (fn_ + tn) + (tp + fp) * (fp + tn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_up_to_relabeling() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 2, 2]), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 0], &[1, 1, 1]), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 1, 2], &[2, 1, 0]), 1.0);
    }

    #[test]
    fn known_value() {
        // ordered pairs: tp=2, fp=4, fn=2, tn=4, so tp*tn - fn*fp = 0
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 0, 1]);
        assert!(v.abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in proptest::collection::vec(0u8..4, 2..40), seed in 0u8..4) {
            let b: Vec<u8> = a.iter().enumerate().map(|(i, &x)| (x + (i as u8 % (seed + 1))) % 4).collect();
            let ab = adjusted_rand_index(&a, &b);
            let ba = adjusted_rand_index(&b, &a);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab <= 1.0 + 1e-12);
        }
    }
}
