//! Metadata-dependent priors `P(s | x)` over community labels.
//!
//! Discrete metadata carry a `k x K` table whose column `x` is the
//! distribution of communities among nodes with value `x`. Ordered metadata
//! in `[0, 1]` use a degree-`N` Bernstein expansion
//! `P(s | x) = sum_j gamma[s][j] * B_j(x)`; keeping every coefficient in
//! `[0, 1]` with unit column sums makes `P(. | x)` a distribution for every
//! `x`.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metadata::{DiscreteMetadata, MetadataColumn, OrderedMetadata};

/// Slack allowed on row sums of node marginals passed to the M-steps.
const STOCHASTIC_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum PriorError {
    #[error("metadata value {0} lies outside [0, 1]")]
    OutOfUnitInterval(f64),
    #[error("category {index} out of range for a prior over {categories} categories")]
    CategoryOutOfRange { index: usize, categories: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("node {node}: marginal row is not a probability vector")]
    InvalidMarginals { node: usize },
    #[error("prior kind does not match metadata kind")]
    KindMismatch,
    #[error("invalid prior parameters: {0}")]
    Invalid(String),
}

/// Bernstein basis `B_j(x) = C(N, j) x^j (1 - x)^(N - j)` for `j = 0..=N`.
pub fn bernstein_basis(degree: usize, x: f64) -> Result<Vec<f64>, PriorError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(PriorError::OutOfUnitInterval(x));
    }
    let mut out = Vec::with_capacity(degree + 1);
    let mut binom = 1.0f64;
    for j in 0..=degree {
        if j > 0 {
            binom = binom * (degree - j + 1) as f64 / j as f64;
        }
        out.push(binom * x.powi(j as i32) * (1.0 - x).powi((degree - j) as i32));
    }
    Ok(out)
}

/// Point at which a prior is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetaValue {
    Category(usize),
    /// Rescaled ordered value in `[0, 1]`.
    Scalar(f64),
    /// Missing ordered value; the prior is uniform.
    Missing,
}

/// Community prior for discrete metadata; `gamma[[s, x]] = P(s | x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePrior {
    pub gamma: Array2<f64>,
}

/// Community prior for ordered metadata as Bernstein coefficients
/// `gamma[[s, j]]`, `j = 0..=degree`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinPrior {
    pub gamma: Array2<f64>,
}

fn check_columns(gamma: ArrayView2<f64>) -> Result<(), PriorError> {
    if gamma.nrows() == 0 || gamma.ncols() == 0 {
        return Err(PriorError::Invalid("empty coefficient table".into()));
    }
    for (c, col) in gamma.columns().into_iter().enumerate() {
        if col.iter().any(|&g| !(0.0..=1.0 + 1e-12).contains(&g)) {
            return Err(PriorError::Invalid(format!("column {c} has entries outside [0, 1]")));
        }
        let sum: f64 = col.sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(PriorError::Invalid(format!("column {c} sums to {sum}")));
        }
    }
    Ok(())
}

fn uniform_with_noise<R: Rng>(k: usize, cols: usize, noise: f64, rng: &mut R) -> Array2<f64> {
    let mut gamma = Array2::from_elem((k, cols), 1.0);
    if noise > 0.0 {
        gamma.mapv_inplace(|g| g * (1.0 + noise * rng.gen_range(-1.0..1.0)));
    }
    for mut col in gamma.columns_mut() {
        let sum = col.sum();
        col.mapv_inplace(|g| g / sum);
    }
    gamma
}

impl DiscretePrior {
    pub fn new(gamma: Array2<f64>) -> Result<Self, PriorError> {
        check_columns(gamma.view())?;
        Ok(DiscretePrior { gamma })
    }

    pub fn uniform(k: usize, categories: usize) -> Self {
        DiscretePrior {
            gamma: Array2::from_elem((k, categories), 1.0 / k as f64),
        }
    }

    /// Uniform table with multiplicative noise of relative size `noise`,
    /// renormalized per column.
    pub fn perturbed<R: Rng>(k: usize, categories: usize, noise: f64, rng: &mut R) -> Self {
        DiscretePrior {
            gamma: uniform_with_noise(k, categories, noise, rng),
        }
    }

    pub fn communities(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn categories(&self) -> usize {
        self.gamma.ncols()
    }

    pub fn eval(&self, category: usize) -> Result<Vec<f64>, PriorError> {
        if category >= self.categories() {
            return Err(PriorError::CategoryOutOfRange {
                index: category,
                categories: self.categories(),
            });
        }
        Ok(self.gamma.column(category).to_vec())
    }
}

impl BernsteinPrior {
    pub fn new(gamma: Array2<f64>) -> Result<Self, PriorError> {
        check_columns(gamma.view())?;
        Ok(BernsteinPrior { gamma })
    }

    pub fn uniform(k: usize, degree: usize) -> Self {
        BernsteinPrior {
            gamma: Array2::from_elem((k, degree + 1), 1.0 / k as f64),
        }
    }

    pub fn perturbed<R: Rng>(k: usize, degree: usize, noise: f64, rng: &mut R) -> Self {
        BernsteinPrior {
            gamma: uniform_with_noise(k, degree + 1, noise, rng),
        }
    }

    pub fn communities(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn degree(&self) -> usize {
        self.gamma.ncols() - 1
    }

    pub fn eval(&self, x: f64) -> Result<Vec<f64>, PriorError> {
        let basis = bernstein_basis(self.degree(), x)?;
        Ok(self.eval_basis(&basis))
    }

    fn eval_basis(&self, basis: &[f64]) -> Vec<f64> {
        self.gamma
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(basis).map(|(g, b)| g * b).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Prior {
    Discrete(DiscretePrior),
    Bernstein(BernsteinPrior),
}

impl Prior {
    pub fn communities(&self) -> usize {
        match self {
            Prior::Discrete(p) => p.communities(),
            Prior::Bernstein(p) => p.communities(),
        }
    }

    pub fn gamma(&self) -> &Array2<f64> {
        match self {
            Prior::Discrete(p) => &p.gamma,
            Prior::Bernstein(p) => &p.gamma,
        }
    }

    /// `P(. | x)` for a single metadata value.
    pub fn eval(&self, value: MetaValue) -> Result<Vec<f64>, PriorError> {
        match (self, value) {
            (Prior::Discrete(p), MetaValue::Category(c)) => p.eval(c),
            (Prior::Bernstein(p), MetaValue::Scalar(x)) => p.eval(x),
            (Prior::Bernstein(p), MetaValue::Missing) => {
                Ok(vec![1.0 / p.communities() as f64; p.communities()])
            }
            _ => Err(PriorError::KindMismatch),
        }
    }

    /// Per-node prior table (`n x k`) for a whole metadata column.
    pub fn node_values(&self, metadata: &MetadataColumn) -> Result<Array2<f64>, PriorError> {
        let k = self.communities();
        let n = metadata.len();
        let mut out = Array2::zeros((n, k));
        match (self, metadata) {
            (Prior::Discrete(p), MetadataColumn::Discrete(d)) => {
                if d.category_count() != p.categories() {
                    return Err(PriorError::Dimension(format!(
                        "prior has {} categories, metadata has {}",
                        p.categories(),
                        d.category_count()
                    )));
                }
                for (u, &x) in d.values().iter().enumerate() {
                    out.row_mut(u).assign(&p.gamma.column(x));
                }
            }
            (Prior::Bernstein(p), MetadataColumn::Ordered(o)) => {
                for (u, x) in o.scaled().iter().enumerate() {
                    match x {
                        Some(x) => {
                            let basis = bernstein_basis(p.degree(), *x)?;
                            for (s, v) in p.eval_basis(&basis).into_iter().enumerate() {
                                out[[u, s]] = v;
                            }
                        }
                        None => out.row_mut(u).fill(1.0 / k as f64),
                    }
                }
            }
            _ => return Err(PriorError::KindMismatch),
        }
        Ok(out)
    }
}

fn check_marginals(marginals: ArrayView2<f64>, n: usize) -> Result<(), PriorError> {
    if marginals.nrows() != n {
        return Err(PriorError::Dimension(format!(
            "{} marginal rows for {} metadata entries",
            marginals.nrows(),
            n
        )));
    }
    if marginals.ncols() == 0 {
        return Err(PriorError::Dimension("marginals have zero communities".into()));
    }
    for (u, row) in marginals.rows().into_iter().enumerate() {
        let sum: f64 = row.sum();
        if row.iter().any(|&q| !(q >= 0.0)) || (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(PriorError::InvalidMarginals { node: u });
        }
    }
    Ok(())
}

/// Closed-form prior update for discrete metadata: each column is the mean
/// node marginal over the nodes carrying that value. Categories with no
/// nodes get a uniform column.
pub fn m_step_gamma_discrete(
    marginals: ArrayView2<f64>,
    metadata: &DiscreteMetadata,
) -> Result<DiscretePrior, PriorError> {
    check_marginals(marginals, metadata.len())?;
    let k = marginals.ncols();
    let categories = metadata.category_count();
    let mut sums = Array2::<f64>::zeros((k, categories));
    let mut counts = vec![0usize; categories];
    for (u, &x) in metadata.values().iter().enumerate() {
        counts[x] += 1;
        for s in 0..k {
            sums[[s, x]] += marginals[[u, s]];
        }
    }
    for (x, &count) in counts.iter().enumerate() {
        for s in 0..k {
            sums[[s, x]] = if count == 0 {
                1.0 / k as f64
            } else {
                sums[[s, x]] / count as f64
            };
        }
    }
    Ok(DiscretePrior { gamma: sums })
}

/// Controls for the fixed-point iteration behind the ordered prior update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerLoop {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InnerLoop {
    fn default() -> Self {
        InnerLoop {
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderedUpdate {
    pub prior: BernsteinPrior,
    pub iterations: usize,
    pub converged: bool,
}

/// `sum_{u,s} q[u][s] * log P(s | x_u)` over nodes with a value; the quantity
/// the ordered prior update maximizes. Terms with zero weight contribute 0.
pub fn ordered_prior_objective(
    marginals: ArrayView2<f64>,
    metadata: &OrderedMetadata,
    prior: &BernsteinPrior,
) -> Result<f64, PriorError> {
    let mut total = 0.0;
    for (u, x) in metadata.scaled().iter().enumerate() {
        let Some(x) = x else { continue };
        let p = prior.eval(*x)?;
        for (s, ps) in p.iter().enumerate() {
            let q = marginals[[u, s]];
            if q > 0.0 {
                total += q * ps.ln();
            }
        }
    }
    Ok(total)
}

/// Prior update for ordered metadata.
///
/// Alternates the basis responsibilities
/// `Q[s][u][j] = gamma[s][j] B_j(x_u) / sum_i gamma[s][i] B_i(x_u)` with
/// `gamma[s][j] = sum_u q[u][s] Q[s][u][j] / sum_{t,u} q[u][t] Q[t][u][j]`
/// starting from `init`, until no coefficient moves by more than `opts.tol`.
/// Nodes with a missing value do not enter the sums. A basis function that
/// carries no weight at all keeps its previous coefficients.
pub fn m_step_gamma_ordered(
    marginals: ArrayView2<f64>,
    metadata: &OrderedMetadata,
    init: &BernsteinPrior,
    opts: InnerLoop,
) -> Result<OrderedUpdate, PriorError> {
    check_marginals(marginals, metadata.len())?;
    check_columns(init.gamma.view())?;
    let k = marginals.ncols();
    if init.communities() != k {
        return Err(PriorError::Dimension(format!(
            "initial prior has {} communities, marginals have {}",
            init.communities(),
            k
        )));
    }
    let degree = init.degree();
    let width = degree + 1;

    let mut nodes = Vec::new();
    let mut bases = Vec::new();
    for (u, x) in metadata.scaled().iter().enumerate() {
        if let Some(x) = x {
            nodes.push(u);
            bases.extend(bernstein_basis(degree, *x)?);
        }
    }

    let mut gamma = init.gamma.clone();
    let mut acc = Array2::<f64>::zeros((k, width));
    let mut weights = vec![0.0; width];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        acc.fill(0.0);
        for (i, &u) in nodes.iter().enumerate() {
            let basis = &bases[i * width..(i + 1) * width];
            for s in 0..k {
                let q = marginals[[u, s]];
                if q == 0.0 {
                    continue;
                }
                let row = gamma.row(s);
                for (j, w) in weights.iter_mut().enumerate() {
                    *w = row[j] * basis[j];
                }
                let norm: f64 = weights.iter().sum();
                if norm <= 0.0 {
                    continue;
                }
                let scale = q / norm;
                for (j, w) in weights.iter().enumerate() {
                    acc[[s, j]] += scale * w;
                }
            }
        }

        let mut change = 0.0f64;
        for j in 0..width {
            let total: f64 = acc.column(j).sum();
            if total <= 0.0 {
                continue;
            }
            for s in 0..k {
                let next = acc[[s, j]] / total;
                change = change.max((next - gamma[[s, j]]).abs());
                gamma[[s, j]] = next;
            }
        }
        if change < opts.tol {
            converged = true;
            break;
        }
    }

    Ok(OrderedUpdate {
        prior: BernsteinPrior { gamma },
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use num_rational::BigRational;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn basis_linear_and_endpoint() {
        assert_eq!(bernstein_basis(1, 0.5).unwrap(), vec![0.5, 0.5]);
        assert_eq!(bernstein_basis(3, 0.0).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(bernstein_basis(0, 0.7).unwrap(), vec![1.0]);
        assert!(matches!(bernstein_basis(2, 1.5), Err(PriorError::OutOfUnitInterval(_))));
        assert!(bernstein_basis(2, -0.1).is_err());
    }

    /// Exact rational evaluation of C(N, j) x^j (1 - x)^(N - j).
    fn rational_basis(degree: u32, num: i64, den: i64) -> Vec<f64> {
        use num_bigint::BigInt;
        let x = BigRational::new(BigInt::from(num), BigInt::from(den));
        let one = BigRational::from_integer(BigInt::from(1));
        (0..=degree)
            .map(|j| {
                let mut c = BigInt::from(1);
                for i in 0..j {
                    c = c * BigInt::from(degree - i) / BigInt::from(i + 1);
                }
                let term = BigRational::from_integer(c)
                    * num_traits_pow(&x, j)
                    * num_traits_pow(&(one.clone() - x.clone()), degree - j);
                let (n, d) = (term.numer().to_string(), term.denom().to_string());
                n.parse::<f64>().unwrap() / d.parse::<f64>().unwrap()
            })
            .collect()
    }

    fn num_traits_pow(x: &BigRational, p: u32) -> BigRational {
        let mut out = BigRational::from_integer(1.into());
        for _ in 0..p {
            out = out * x.clone();
        }
        out
    }

    #[test]
    fn basis_degree_four_matches_exact_rationals() {
        let exact = rational_basis(4, 3, 10);
        // frozen from the rational evaluation: 2401, 4116, 2646, 756, 81 over 10^4
        let frozen = [0.2401, 0.4116, 0.2646, 0.0756, 0.0081];
        let got = bernstein_basis(4, 0.3).unwrap();
        for j in 0..5 {
            assert_abs_diff_eq!(exact[j], frozen[j], epsilon = 1e-15);
            assert_abs_diff_eq!(got[j], frozen[j], epsilon = 1e-15);
        }
        assert_abs_diff_eq!(got.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn eval_examples() {
        let identity = DiscretePrior::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(identity.eval(0).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(identity.eval(2), Err(PriorError::CategoryOutOfRange { .. })));

        let flat = BernsteinPrior::uniform(3, 4);
        for x in [0.0, 0.2, 0.77, 1.0] {
            for p in flat.eval(x).unwrap() {
                assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
            }
        }

        let linear = BernsteinPrior::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let p = linear.eval(0.25).unwrap();
        assert_abs_diff_eq!(p[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.25, epsilon = 1e-15);

        let prior = Prior::Bernstein(linear);
        assert_eq!(prior.eval(MetaValue::Missing).unwrap(), vec![0.5, 0.5]);
        assert_eq!(prior.eval(MetaValue::Category(0)), Err(PriorError::KindMismatch));
    }

    #[test]
    fn invalid_tables_rejected() {
        assert!(DiscretePrior::new(array![[0.6, 0.5], [0.6, 0.5]]).is_err());
        assert!(BernsteinPrior::new(array![[1.2, 0.5], [-0.2, 0.5]]).is_err());
    }

    #[test]
    fn discrete_update_identity_fixed_point() {
        let q = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        let meta = DiscreteMetadata::from_indices(vec![0, 1, 0, 1], 2).unwrap();
        let g = m_step_gamma_discrete(q.view(), &meta).unwrap();
        assert_eq!(g.gamma, array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn discrete_update_uniform_and_empty() {
        let q = Array2::from_elem((4, 3), 1.0 / 3.0);
        let meta = DiscreteMetadata::from_indices(vec![0, 0, 1, 1], 3).unwrap();
        let g = m_step_gamma_discrete(q.view(), &meta).unwrap();
        for v in g.gamma.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn discrete_update_category_means() {
        let q = array![[0.9, 0.1], [0.6, 0.4], [0.2, 0.8]];
        let meta = DiscreteMetadata::from_indices(vec![0, 0, 1], 2).unwrap();
        let g = m_step_gamma_discrete(q.view(), &meta).unwrap();
        assert_abs_diff_eq!(g.gamma[[0, 0]], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(g.gamma[[1, 0]], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(g.gamma[[0, 1]], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(g.gamma[[1, 1]], 0.8, epsilon = 1e-12);
    }

    #[test]
    fn discrete_update_errors() {
        let q = array![[0.9, 0.1], [0.6, 0.4]];
        let meta = DiscreteMetadata::from_indices(vec![0, 0, 1], 2).unwrap();
        assert!(matches!(m_step_gamma_discrete(q.view(), &meta), Err(PriorError::Dimension(_))));
        let bad = array![[0.9, 0.3], [0.6, 0.4], [0.5, 0.5]];
        assert_eq!(
            m_step_gamma_discrete(bad.view(), &meta),
            Err(PriorError::InvalidMarginals { node: 0 })
        );
    }

    #[test]
    fn ordered_update_x_independent() {
        let p = [0.3, 0.7];
        let n = 50;
        let q = Array2::from_shape_fn((n, 2), |(_, s)| p[s]);
        let meta = OrderedMetadata::from_unit((0..n).map(|u| Some(u as f64 / (n - 1) as f64)).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let init = BernsteinPrior::perturbed(2, 4, 0.1, &mut rng);
        let out = m_step_gamma_ordered(q.view(), &meta, &init, InnerLoop { tol: 1e-12, max_iter: 5000 }).unwrap();
        for j in 0..5 {
            assert_abs_diff_eq!(out.prior.gamma[[0, j]], 0.3, epsilon = 1e-6);
            assert_abs_diff_eq!(out.prior.gamma[[1, j]], 0.7, epsilon = 1e-6);
        }
    }

    #[test]
    fn ordered_update_single_node() {
        let q = array![[1.0, 0.0]];
        let meta = OrderedMetadata::from_unit(vec![Some(0.4)]);
        let init = BernsteinPrior::uniform(2, 3);
        let out = m_step_gamma_ordered(q.view(), &meta, &init, InnerLoop::default()).unwrap();
        for j in 0..4 {
            assert_abs_diff_eq!(out.prior.gamma[[0, j]], 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(out.prior.gamma[[1, j]], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ordered_update_ignores_missing_nodes() {
        let q = array![[1.0, 0.0], [0.0, 1.0]];
        let meta = OrderedMetadata::from_unit(vec![Some(0.5), None]);
        let out = m_step_gamma_ordered(q.view(), &meta, &BernsteinPrior::uniform(2, 1), InnerLoop::default())
            .unwrap();
        assert_abs_diff_eq!(out.prior.gamma[[0, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.prior.gamma[[0, 1]], 1.0, epsilon = 1e-12);
        let values = Prior::Bernstein(out.prior).node_values(&MetadataColumn::Ordered(meta)).unwrap();
        assert_eq!(values.row(1).to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn ordered_objective_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200;
        let k = 3;
        let xs: Vec<Option<f64>> = (0..n).map(|_| Some(rng.gen::<f64>())).collect();
        let meta = OrderedMetadata::from_unit(xs.clone());
        let q = Array2::from_shape_fn((n, k), |(u, s)| {
            let x = xs[u].unwrap();
            [x * x, 1.0 - x, x - x * x][s]
        });
        let q = &q / &q.sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1));
        let mut prior = BernsteinPrior::perturbed(k, 5, 0.1, &mut rng);
        let mut last = ordered_prior_objective(q.view(), &meta, &prior).unwrap();
        for _ in 0..50 {
            let step = m_step_gamma_ordered(q.view(), &meta, &prior, InnerLoop { tol: 0.0, max_iter: 1 }).unwrap();
            prior = step.prior;
            let now = ordered_prior_objective(q.view(), &meta, &prior).unwrap();
            assert!(now >= last - 1e-12, "objective fell from {last} to {now}");
            last = now;
        }
    }

    proptest! {
        #[test]
        fn bernstein_prior_is_a_distribution(
            k in 1usize..5,
            degree in 0usize..8,
            seed in any::<u64>(),
            x in 0.0f64..=1.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw = Array2::from_shape_fn((k, degree + 1), |_| rng.gen::<f64>() + 1e-3);
            let gamma = &raw / &raw.sum_axis(ndarray::Axis(0));
            let prior = BernsteinPrior::new(gamma).unwrap();
            let p = prior.eval(x).unwrap();
            prop_assert!(p.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn basis_sums_to_one(degree in 0usize..40, x in 0.0f64..=1.0) {
            let b = bernstein_basis(degree, x).unwrap();
            prop_assert!(b.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn m_steps_keep_columns_normalized(seed in any::<u64>(), n in 1usize..40, k in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw = Array2::from_shape_fn((n, k), |_| rng.gen::<f64>() + 1e-6);
            let q = &raw / &raw.sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1));
            let cats: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let d = m_step_gamma_discrete(q.view(), &DiscreteMetadata::from_indices(cats, 3).unwrap()).unwrap();
            for col in d.gamma.columns() {
                prop_assert!((col.sum() - 1.0).abs() < 1e-12);
                prop_assert!(col.iter().all(|&g| (0.0..=1.0 + 1e-12).contains(&g)));
            }
            let xs = (0..n).map(|_| if rng.gen_bool(0.1) { None } else { Some(rng.gen::<f64>()) }).collect();
            let meta = OrderedMetadata::from_unit(xs);
            let o = m_step_gamma_ordered(q.view(), &meta, &BernsteinPrior::perturbed(k, 3, 0.1, &mut rng), InnerLoop::default()).unwrap();
            for col in o.prior.gamma.columns() {
                prop_assert!((col.sum() - 1.0).abs() < 1e-9);
                prop_assert!(col.iter().all(|&g| (0.0..=1.0 + 1e-12).contains(&g)));
            }
        }
    }
}
