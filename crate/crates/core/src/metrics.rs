//! Partition agreement metrics.

use std::collections::BTreeMap;

fn choose2(n: u64) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Adjusted Rand index between two labellings of the same items
/// (Hubert & Arabie). Returns 1.0 when both labellings are trivial in the
/// same way (all singletons or a single cluster).
pub fn adjusted_rand_index<A: Ord, B: Ord>(pred: &[A], truth: &[B]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "labellings differ in length");
    let n = pred.len() as u64;
    if n < 2 {
        return 1.0;
    }
    let mut table: BTreeMap<(&A, &B), u64> = BTreeMap::new();
    let mut rows: BTreeMap<&A, u64> = BTreeMap::new();
    let mut cols: BTreeMap<&B, u64> = BTreeMap::new();
    for (p, t) in pred.iter().zip(truth) {
        *table.entry((p, t)).or_insert(0) += 1;
        *rows.entry(p).or_insert(0) += 1;
        *cols.entry(t).or_insert(0) += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_rows * sum_cols / choose2(n);
    let max = (sum_rows + sum_cols) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        // frozen from scikit-learn's adjusted_rand_score
        assert!(
            (adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 1, 2]) - 0.5714285714285714).abs() < 1e-12
        );
        assert!(
            (adjusted_rand_index(&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 2, 2]) - 0.24242424242424243)
                .abs()
                < 1e-12
        );
        assert_eq!(adjusted_rand_index(&[0, 1, 2, 3], &[0, 0, 0, 0]), 0.0);
    }

    #[test]
    fn label_permutation_is_perfect_agreement() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        assert_eq!(adjusted_rand_index(&["a", "b"], &[7, 9]), 1.0);
    }
}
