//! Agreement between labelings: min-normalized mutual information, the
//! model's conditional entropy of communities given metadata, and
//! label-permutation accuracy. Entropies are in bits.

use std::collections::HashMap;

use itertools::Itertools;
use thiserror::Error;

use crate::metadata::DiscreteMetadata;
use crate::prior::DiscretePrior;

/// Largest `k` for which [`fraction_correct`] enumerates permutations.
pub const MAX_PERMUTATION_K: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("labelings have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("labelings are empty")]
    Empty,
    #[error("k = {0} is too large for permutation matching (limit {MAX_PERMUTATION_K}); use NMI instead")]
    TooManyCommunities(usize),
    #[error("label {label} outside 0..{k}")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("prior has {prior} categories but metadata has {metadata}")]
    Dimension { prior: usize, metadata: usize },
}

/// Joint counts of two labelings over the same nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Vec<Vec<usize>>,
    total: usize,
}

impl ContingencyTable {
    /// Builds the table, compacting each side's labels to `0..` in order of
    /// first appearance.
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self, MetricsError> {
        if a.len() != b.len() {
            return Err(MetricsError::LengthMismatch(a.len(), b.len()));
        }
        let ia = compact(a);
        let ib = compact(b);
        let rows = ia.iter().max().map_or(0, |m| m + 1);
        let cols = ib.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![vec![0usize; cols]; rows];
        for (&x, &y) in ia.iter().zip(&ib) {
            counts[x][y] += 1;
        }
        Ok(ContingencyTable { counts, total: a.len() })
    }

    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.total
    }

    fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    fn col_sums(&self) -> Vec<usize> {
        let cols = self.counts.first().map_or(0, Vec::len);
        (0..cols).map(|c| self.counts.iter().map(|r| r[c]).sum()).collect()
    }
}

fn compact(labels: &[usize]) -> Vec<usize> {
    let mut index = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = index.len();
            *index.entry(*l).or_insert(next)
        })
        .collect()
}

fn entropy_bits(counts: &[usize], total: usize) -> f64 {
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Mutual information divided by the smaller of the two entropies.
///
/// Lies in `[0, 1]` and is symmetric. When either labeling is constant the
/// result is 0.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64, MetricsError> {
    let table = ContingencyTable::new(a, b)?;
    if table.total == 0 {
        return Err(MetricsError::Empty);
    }
    let n = table.total as f64;
    let ha = entropy_bits(&table.row_sums(), table.total);
    let hb = entropy_bits(&table.col_sums(), table.total);
    let h_min = ha.min(hb);
    if h_min <= 0.0 {
        return Ok(0.0);
    }
    let rows = table.row_sums();
    let cols = table.col_sums();
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (rows[i] as f64 * cols[j] as f64)).log2();
            }
        }
    }
    Ok((mi / h_min).clamp(0.0, 1.0))
}

/// Conditional entropy `H(s | x) = -(1/n) sum_u sum_s g log2 g` with
/// `g = gamma[s][x_u]`, read off the fitted prior instead of counted.
pub fn conditional_entropy_model(prior: &DiscretePrior, metadata: &DiscreteMetadata) -> Result<f64, MetricsError> {
    if prior.categories() != metadata.category_count() {
        return Err(MetricsError::Dimension {
            prior: prior.categories(),
            metadata: metadata.category_count(),
        });
    }
    if metadata.is_empty() {
        return Err(MetricsError::Empty);
    }
    let per_category: Vec<f64> = prior
        .gamma
        .columns()
        .into_iter()
        .map(|col| col.iter().filter(|&&g| g > 0.0).map(|&g| -g * g.log2()).sum())
        .collect();
    let total: f64 = metadata.values().iter().map(|&x| per_category[x]).sum();
    Ok(total / metadata.len() as f64)
}

/// Best fraction of nodes whose assigned community matches the truth over
/// all relabelings of the assignment. Labels must lie in `0..k`.
pub fn fraction_correct(assignment: &[usize], truth: &[usize], k: usize) -> Result<f64, MetricsError> {
    if k > MAX_PERMUTATION_K {
        return Err(MetricsError::TooManyCommunities(k));
    }
    if assignment.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(assignment.len(), truth.len()));
    }
    if assignment.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut counts = vec![vec![0usize; k]; k];
    for (&a, &t) in assignment.iter().zip(truth) {
        if a >= k || t >= k {
            return Err(MetricsError::LabelOutOfRange { label: a.max(t), k });
        }
        counts[a][t] += 1;
    }
    let best = (0..k)
        .permutations(k)
        .map(|perm| perm.iter().enumerate().map(|(a, &t)| counts[a][t]).sum::<usize>())
        .max()
        .unwrap_or(0);
    Ok(best as f64 / assignment.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nmi_identical_and_constant() {
        let a = [0, 0, 1, 1, 0];
        assert_abs_diff_eq!(nmi(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(nmi(&a, &[3, 3, 3, 3, 3]).unwrap(), 0.0);
        assert_eq!(nmi(&[2, 2], &[2, 2]).unwrap(), 0.0);
    }

    #[test]
    fn nmi_four_node_example() {
        // H(a) = 1, H(b) = 0.811278, I = 0.311278 bits
        let v = nmi(&[1, 1, 2, 2], &[1, 1, 1, 2]).unwrap();
        assert_abs_diff_eq!(v, 0.311278 / 0.811278, epsilon = 1e-5);
        assert_abs_diff_eq!(v, 0.3837, epsilon = 1e-4);
    }

    #[test]
    fn nmi_errors() {
        assert_eq!(nmi(&[0, 1], &[0]), Err(MetricsError::LengthMismatch(2, 1)));
        assert_eq!(nmi(&[], &[]), Err(MetricsError::Empty));
    }

    #[test]
    fn nmi_random_labelings_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let a: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..2)).collect();
        let b: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..2)).collect();
        assert!(nmi(&a, &b).unwrap() < 0.05);
    }

    #[test]
    fn conditional_entropy_examples() {
        let meta = DiscreteMetadata::from_indices(vec![0, 1, 0, 1], 2).unwrap();
        let identity = DiscretePrior::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(conditional_entropy_model(&identity, &meta).unwrap(), 0.0);

        let uniform = DiscretePrior::uniform(4, 2);
        assert_abs_diff_eq!(conditional_entropy_model(&uniform, &meta).unwrap(), 2.0, epsilon = 1e-12);

        let skew = DiscretePrior::new(array![[0.75, 0.75], [0.25, 0.25]]).unwrap();
        assert_abs_diff_eq!(conditional_entropy_model(&skew, &meta).unwrap(), 0.811278, epsilon = 1e-6);

        let wrong = DiscretePrior::uniform(2, 3);
        assert!(conditional_entropy_model(&wrong, &meta).is_err());
    }

    #[test]
    fn conditional_entropy_drops_toward_one_hot() {
        let meta = DiscreteMetadata::from_indices(vec![0, 0, 1], 2).unwrap();
        let mut last = f64::INFINITY;
        for step in 0..=10 {
            let p = 0.5 + 0.05 * step as f64;
            let prior = DiscretePrior::new(Array2::from_shape_vec((2, 2), vec![p, 0.5, 1.0 - p, 0.5]).unwrap()).unwrap();
            let h = conditional_entropy_model(&prior, &meta).unwrap();
            assert!(h < last);
            last = h;
        }
    }

    #[test]
    fn accuracy_examples() {
        let truth = [0, 0, 1, 1];
        assert_eq!(fraction_correct(&truth, &truth, 2).unwrap(), 1.0);
        assert_eq!(fraction_correct(&[1, 1, 0, 0], &truth, 2).unwrap(), 1.0);
        assert_eq!(fraction_correct(&[0, 1, 1, 1], &truth, 2).unwrap(), 0.75);
        assert_eq!(fraction_correct(&[0; 4], &truth, 11), Err(MetricsError::TooManyCommunities(11)));
        assert!(matches!(fraction_correct(&[2, 0, 0, 0], &truth, 2), Err(MetricsError::LabelOutOfRange { .. })));
    }

    #[test]
    fn accuracy_of_random_guess_near_one_over_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k = 3;
        let truth: Vec<usize> = (0..3000).map(|u| u % k).collect();
        let guess: Vec<usize> = (0..3000).map(|_| rng.gen_range(0..k)).collect();
        let acc = fraction_correct(&guess, &truth, k).unwrap();
        assert!(acc >= 1.0 / k as f64 - 0.01 && acc < 1.0 / k as f64 + 0.05, "{acc}");
    }

    proptest! {
        #[test]
        fn nmi_symmetric_and_relabel_invariant(
            a in proptest::collection::vec(0usize..4, 1..60),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<usize> = a.iter().map(|_| rng.gen_range(0..3)).collect();
            let ab = nmi(&a, &b).unwrap();
            prop_assert!((ab - nmi(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
            let relabeled: Vec<usize> = a.iter().map(|x| 10 + 3 * (3 - x)).collect();
            prop_assert!((ab - nmi(&relabeled, &b).unwrap()).abs() < 1e-12);
        }
    }
}
