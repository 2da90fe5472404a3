use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Lower bound applied to every block affinity after an M-step, so that
/// `ln theta` stays finite for blocks that received no edges.
pub const THETA_FLOOR: f64 = 1e-12;

/// Symmetric `k x k` matrix of degree-corrected edge propensities: nodes `u`
/// and `v` in communities `s` and `t` are linked with probability
/// `d_u d_v theta[s][t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockAffinity {
    pub theta: Array2<f64>,
}

impl BlockAffinity {
    /// Wraps a matrix, returning `None` unless it is square, symmetric and
    /// strictly positive.
    pub fn new(theta: Array2<f64>) -> Option<Self> {
        let k = theta.nrows();
        if k == 0 || theta.ncols() != k {
            return None;
        }
        for s in 0..k {
            for t in 0..k {
                let v = theta[[s, t]];
                if !(v > 0.0 && v.is_finite()) || (v - theta[[t, s]]).abs() > 1e-12 * v.abs().max(1.0) {
                    return None;
                }
            }
        }
        Some(BlockAffinity { theta })
    }

    pub fn uniform(k: usize, value: f64) -> Self {
        BlockAffinity {
            theta: Array2::from_elem((k, k), value),
        }
    }

    /// Diagonal entries `ratio` times the off-diagonal ones, with every row
    /// summing to `k * base`. For equal-sized communities each then predicts
    /// the same expected degree, so none is favored before any data are seen.
    pub fn assortative(k: usize, base: f64, ratio: f64) -> Self {
        let off = base * k as f64 / (ratio + k as f64 - 1.0);
        let mut theta = Array2::from_elem((k, k), off);
        for s in 0..k {
            theta[[s, s]] = ratio * off;
        }
        BlockAffinity { theta }
    }

    pub fn communities(&self) -> usize {
        self.theta.nrows()
    }

    /// Row-major copy, convenient for hot loops.
    pub(crate) fn flat(&self) -> Vec<f64> {
        self.theta.iter().copied().collect()
    }

    /// Applies a relabeling: entry `(perm[s], perm[t])` of the result is
    /// entry `(s, t)` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.communities();
        let mut theta = Array2::zeros((k, k));
        for s in 0..k {
            for t in 0..k {
                theta[[perm[s], perm[t]]] = self.theta[[s, t]];
            }
        }
        BlockAffinity { theta }
    }
}
