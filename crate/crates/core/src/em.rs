//! Expectation-maximization fit of the metadata-aware degree-corrected
//! block model.
//!
//! Each restart alternates a belief-propagation E-step with closed-form
//! M-steps for `theta` and the prior, until the largest relative parameter
//! change falls below `em_tol`. Restarts that exhaust `max_em_steps` are
//! treated as failed; the converged restart with the highest Bethe
//! log-likelihood wins.

use log::{debug, warn};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affinity::{BlockAffinity, THETA_FLOOR};
use crate::bp::{BeliefPropagation, BpError, BpOptions, Marginals};
use crate::graph::Graph;
use crate::metadata::{MetadataColumn, MetadataEncoding, MetadataError};
use crate::metrics::nmi;
use crate::prior::{
    m_step_gamma_discrete, m_step_gamma_ordered, BernsteinPrior, DiscretePrior, InnerLoop, MetaValue, Prior,
    PriorError,
};

/// Relative noise applied to the uniform prior at the start of a restart.
const INIT_PRIOR_NOISE: f64 = 0.1;
/// Starting ratio of diagonal to off-diagonal affinities. Starts much
/// weaker than this sit below the model's own detectability limit, where
/// belief propagation flattens every message and EM stalls at the uniform
/// solution.
const INIT_ASSORTATIVE_RATIO: f64 = 4.0;
/// Largest random relative boost applied to that ratio per restart.
const INIT_ASSORTATIVE_BOOST: f64 = 0.5;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("k = {k} exceeds the number of nodes ({n})")]
    TooManyCommunities { k: usize, n: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Metadata(#[from] MetadataError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Bp(#[from] BpError),
    #[error("all {restarts} restarts failed; last error: {last}")]
    AllRestartsFailed { restarts: usize, last: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_em_steps: usize,
    pub max_bp_steps: usize,
    pub bp_tol: f64,
    /// Threshold on the largest relative parameter change between EM steps.
    pub em_tol: f64,
    pub seed: u64,
    /// Bernstein degree for ordered metadata; ignored for discrete metadata.
    pub bernstein_degree: usize,
    /// Run restarts one after another on the calling thread.
    pub reproducible: bool,
    /// Record the full log-likelihood after every EM step in
    /// [`RestartRecord::trace`]. Costs one extra likelihood evaluation per step.
    pub trace: bool,
}

impl FitConfig {
    pub fn new(k: usize) -> Self {
        FitConfig {
            k,
            restarts: 10,
            max_em_steps: 100,
            max_bp_steps: 20,
            bp_tol: 1e-6,
            em_tol: 1e-6,
            seed: 0,
            bernstein_degree: 4,
            reproducible: false,
            trace: false,
        }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        let counts = [
            ("k", self.k),
            ("restarts", self.restarts),
            ("max_em_steps", self.max_em_steps),
            ("max_bp_steps", self.max_bp_steps),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(FitError::Config(format!("{name} must be at least 1")));
        }
        if !(self.bp_tol > 0.0) || !(self.em_tol > 0.0) {
            return Err(FitError::Config("tolerances must be positive".into()));
        }
        Ok(())
    }

    fn bp_options(&self) -> BpOptions {
        BpOptions {
            max_steps: self.max_bp_steps,
            tol: self.bp_tol,
            ..BpOptions::default()
        }
    }
}

/// Output of the block-affinity M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaUpdate {
    pub theta: BlockAffinity,
    /// Communities whose expected degree mass was zero; their rows and
    /// columns were set to the floor.
    pub empty_communities: Vec<usize>,
    /// `sum_{s,t} theta[s][t] kappa_s kappa_t` before flooring, where
    /// `kappa_s = sum_u d_u q[u][s]`. Equals `2m` when no community is empty.
    pub mass: f64,
}

/// Expected degree mass per community, `kappa_s = sum_u d_u q[u][s]`.
pub fn degree_mass(graph: &Graph, node: ArrayView2<f64>) -> Vec<f64> {
    let k = node.ncols();
    let mut kappa = vec![0.0; k];
    for u in 0..graph.node_count() {
        let d = graph.degree(u) as f64;
        for (s, m) in kappa.iter_mut().enumerate() {
            *m += d * node[[u, s]];
        }
    }
    kappa
}

/// Sum over ordered adjacent pairs of the edge marginals,
/// `E[s][t] = sum_{uv} a_uv q[uv][s][t]`, symmetric by construction.
pub fn edge_block_counts(marginals: &Marginals) -> Array2<f64> {
    let k = marginals.communities();
    let mut acc = vec![0.0; k * k];
    for i in 0..marginals.edge_count() {
        for (a, q) in acc.iter_mut().zip(marginals.edge(i)) {
            *a += q;
        }
    }
    Array2::from_shape_fn((k, k), |(s, t)| acc[s * k + t] + acc[t * k + s])
}

/// Closed-form affinity update
/// `theta[s][t] = E[s][t] / (kappa_s kappa_t)`, floored at [`THETA_FLOOR`].
pub fn m_step_theta(graph: &Graph, marginals: &Marginals) -> Result<ThetaUpdate, FitError> {
    if marginals.node().nrows() != graph.node_count() || marginals.edge_count() != graph.edge_count() {
        return Err(FitError::Bp(BpError::Dimension("marginals do not match graph".into())));
    }
    let k = marginals.communities();
    let counts = edge_block_counts(marginals);
    let kappa = degree_mass(graph, marginals.node());
    let empty_communities: Vec<usize> = (0..k).filter(|&s| !(kappa[s] > 0.0)).collect();
    let mut theta = Array2::from_elem((k, k), THETA_FLOOR);
    let mut mass = 0.0;
    for s in 0..k {
        for t in 0..k {
            let denom = kappa[s] * kappa[t];
            if denom > 0.0 {
                let value = counts[[s, t]] / denom;
                mass += value * denom;
                theta[[s, t]] = value.max(THETA_FLOOR);
            }
        }
    }
    // exact symmetry despite floating-point summation order
    for s in 0..k {
        for t in (s + 1)..k {
            let avg = 0.5 * (theta[[s, t]] + theta[[t, s]]);
            theta[[s, t]] = avg;
            theta[[t, s]] = avg;
        }
    }
    if !empty_communities.is_empty() {
        debug!("communities with zero degree mass: {empty_communities:?}");
    }
    Ok(ThetaUpdate {
        theta: BlockAffinity { theta },
        empty_communities,
        mass,
    })
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// Bethe estimate of `ln P(A | theta, prior)` with the graph-only constants
/// dropped:
///
/// ```text
/// 1/2 sum_st ln theta_st E_st + sum_u sum_s q_us ln P(s | x_u)
///   - 1/2 sum_uv a_uv sum_st q_uv,st ln q_uv,st + sum_u (d_u - 1) sum_s q_us ln q_us
/// ```
///
/// The prior term is the marginal-weighted log prior; once the prior is at
/// its M-step optimum for these marginals it equals
/// `sum_u sum_s gamma[s][x_u] ln gamma[s][x_u]`. Values are only comparable
/// between fits of the same graph.
pub fn bethe_log_likelihood(
    graph: &Graph,
    theta: &BlockAffinity,
    prior: &Prior,
    marginals: &Marginals,
    metadata: &MetadataColumn,
) -> Result<f64, FitError> {
    let prior_values = prior.node_values(metadata)?;
    bethe_with_prior_values(graph, theta, prior_values.view(), marginals)
}

/// [`bethe_log_likelihood`] with the per-node prior table given directly.
pub fn bethe_with_prior_values(
    graph: &Graph,
    theta: &BlockAffinity,
    prior_values: ArrayView2<f64>,
    marginals: &Marginals,
) -> Result<f64, FitError> {
    let k = marginals.communities();
    let node = marginals.node();
    if theta.communities() != k || prior_values.dim() != node.dim() || node.nrows() != graph.node_count() {
        return Err(FitError::Bp(BpError::Dimension("inputs disagree on n or k".into())));
    }
    let counts = edge_block_counts(marginals);
    let mut ll = 0.0;
    for s in 0..k {
        for t in 0..k {
            if counts[[s, t]] > 0.0 {
                ll += 0.5 * theta.theta[[s, t]].ln() * counts[[s, t]];
            }
        }
    }
    for u in 0..graph.node_count() {
        let d = graph.degree(u) as f64;
        for s in 0..k {
            let q = node[[u, s]];
            if q > 0.0 {
                ll += q * prior_values[[u, s]].ln();
                ll += (d - 1.0) * plogp(q);
            }
        }
    }
    // each undirected edge appears twice in sum_uv a_uv, cancelling the 1/2
    for i in 0..marginals.edge_count() {
        ll -= marginals.edge(i).iter().map(|&q| plogp(q)).sum::<f64>();
    }
    Ok(ll)
}

/// Terms the Bethe score omits because they are (to leading order) fixed
/// for a given graph: `sum_u d_u ln d_u - 1/2 sum_st theta_st kappa_s kappa_t`.
/// Adding them to [`bethe_log_likelihood`] estimates the full log-likelihood.
pub fn bethe_omitted_terms(graph: &Graph, theta: &BlockAffinity, marginals: &Marginals) -> f64 {
    let kappa = degree_mass(graph, marginals.node());
    let k = kappa.len();
    let mut total: f64 = graph
        .degrees()
        .into_iter()
        .filter(|&d| d > 0)
        .map(|d| d as f64 * (d as f64).ln())
        .sum();
    for s in 0..k {
        for t in 0..k {
            total -= 0.5 * theta.theta[[s, t]] * kappa[s] * kappa[t];
        }
    }
    total
}

/// Largest parameter change between EM steps. Affinities are compared
/// relative to their own size (with a floor of 1e-3 of the largest entry);
/// prior coefficients are probabilities and are compared absolutely.
pub fn parameter_change(old_theta: &BlockAffinity, new_theta: &BlockAffinity, old_prior: &Prior, new_prior: &Prior) -> f64 {
    let scale = old_theta.theta.iter().copied().fold(0.0, f64::max) * 1e-3;
    let theta_change = old_theta
        .theta
        .iter()
        .zip(new_theta.theta.iter())
        .map(|(a, b)| (a - b).abs() / a.abs().max(scale).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    let gamma_change = old_prior
        .gamma()
        .iter()
        .zip(new_prior.gamma().iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    theta_change.max(gamma_change)
}

/// Per-restart outcome, kept for the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub seed: u64,
    pub log_likelihood: f64,
    pub converged: bool,
    pub em_steps: usize,
    /// Set when the restart aborted; its other fields are then meaningless.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Bethe score plus [`bethe_omitted_terms`] for the parameters entering
    /// each E-step. Empty unless [`FitConfig::trace`] is set.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta: BlockAffinity,
    pub prior: Prior,
    pub encoding: MetadataEncoding,
    pub marginals: Marginals,
    /// `argmax_s q[u][s]`, ties to the lowest index.
    pub assignment: Vec<usize>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub em_steps: usize,
    pub restart_index: usize,
    /// NMI between the assignment and discrete metadata; `None` for ordered.
    pub nmi_vs_metadata: Option<f64>,
    pub restarts: Vec<RestartRecord>,
}

struct RestartFit {
    theta: BlockAffinity,
    prior: Prior,
    marginals: Marginals,
    record: RestartRecord,
}

/// Seed of restart (or job) `index` derived from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined state
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn initial_prior(metadata: &MetadataColumn, config: &FitConfig, rng: &mut ChaCha8Rng) -> Prior {
    match metadata {
        MetadataColumn::Discrete(d) => {
            Prior::Discrete(DiscretePrior::perturbed(config.k, d.category_count(), INIT_PRIOR_NOISE, rng))
        }
        MetadataColumn::Ordered(_) => Prior::Bernstein(BernsteinPrior::perturbed(
            config.k,
            config.bernstein_degree,
            INIT_PRIOR_NOISE,
            rng,
        )),
    }
}

fn m_step_prior(prior: &Prior, marginals: &Marginals, metadata: &MetadataColumn) -> Result<Prior, FitError> {
    Ok(match (prior, metadata) {
        (Prior::Discrete(_), MetadataColumn::Discrete(d)) => Prior::Discrete(m_step_gamma_discrete(marginals.node(), d)?),
        (Prior::Bernstein(current), MetadataColumn::Ordered(o)) => {
            let update = m_step_gamma_ordered(marginals.node(), o, current, InnerLoop::default())?;
            if !update.converged {
                debug!("ordered prior update stopped after {} iterations", update.iterations);
            }
            Prior::Bernstein(update.prior)
        }
        _ => return Err(FitError::Prior(PriorError::KindMismatch)),
    })
}

fn fit_restart(graph: &Graph, metadata: &MetadataColumn, config: &FitConfig, seed: u64) -> Result<RestartFit, FitError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = graph.edge_count();
    let base = if m > 0 { 1.0 / (2.0 * m as f64) } else { 1.0 };
    let mut prior = initial_prior(metadata, config, &mut rng);
    let mut theta = BlockAffinity::assortative(
        config.k,
        base,
        INIT_ASSORTATIVE_RATIO * (1.0 + rng.gen_range(0.0..=INIT_ASSORTATIVE_BOOST)),
    );
    let mut prior_values = prior.node_values(metadata)?;
    let bp_opts = config.bp_options();
    let mut bp = BeliefPropagation::new(graph, prior_values.view(), rng.gen(), bp_opts.init_noise)?;

    let mut converged = false;
    let mut steps = 0;
    let mut trace = Vec::new();
    while steps < config.max_em_steps {
        steps += 1;
        bp.run(&theta, prior_values.view(), &bp_opts)?;
        let marginals = bp.marginals(&theta)?;
        if config.trace {
            trace.push(
                bethe_with_prior_values(graph, &theta, prior_values.view(), &marginals)?
                    + bethe_omitted_terms(graph, &theta, &marginals),
            );
        }

        let next_theta = m_step_theta(graph, &marginals)?.theta;
        let next_prior = m_step_prior(&prior, &marginals, metadata)?;
        let change = parameter_change(&theta, &next_theta, &prior, &next_prior);
        theta = next_theta;
        prior = next_prior;
        prior_values = prior.node_values(metadata)?;
        if change < config.em_tol {
            converged = true;
            break;
        }
    }

    // score the final parameters against their own posterior
    bp.run(&theta, prior_values.view(), &bp_opts)?;
    let marginals = bp.marginals(&theta)?;
    let log_likelihood = bethe_with_prior_values(graph, &theta, prior_values.view(), &marginals)?;
    debug!("restart seed {seed}: ll {log_likelihood:.6}, converged {converged} after {steps} EM steps");
    Ok(RestartFit {
        theta,
        prior,
        marginals,
        record: RestartRecord {
            seed,
            log_likelihood,
            converged,
            em_steps: steps,
            error: None,
            trace,
        },
    })
}

/// Fits the model with `config.restarts` random restarts.
pub fn fit(graph: &Graph, metadata: &MetadataColumn, config: &FitConfig) -> Result<FitResult, FitError> {
    config.validate()?;
    let n = graph.node_count();
    if config.k > n {
        return Err(FitError::TooManyCommunities { k: config.k, n });
    }
    metadata.check_len(n)?;

    let seeds: Vec<u64> = (0..config.restarts as u64).map(|r| derive_seed(config.seed, r)).collect();
    let attempts: Vec<Result<RestartFit, FitError>> = if config.reproducible {
        seeds.iter().map(|&s| fit_restart(graph, metadata, config, s)).collect()
    } else {
        seeds.par_iter().map(|&s| fit_restart(graph, metadata, config, s)).collect()
    };

    let mut restarts = Vec::with_capacity(attempts.len());
    let mut runs: Vec<(usize, RestartFit)> = Vec::new();
    let mut last_error = None;
    for (i, (attempt, &seed)) in attempts.into_iter().zip(&seeds).enumerate() {
        match attempt {
            Ok(run) => {
                restarts.push(run.record.clone());
                runs.push((i, run));
            }
            Err(e) => {
                warn!("restart {i} (seed {seed}) failed: {e}");
                restarts.push(RestartRecord {
                    seed,
                    log_likelihood: f64::NAN,
                    converged: false,
                    em_steps: 0,
                    error: Some(e.to_string()),
                    trace: Vec::new(),
                });
                last_error = Some(e);
            }
        }
    }
    if runs.is_empty() {
        return Err(FitError::AllRestartsFailed {
            restarts: seeds.len(),
            last: last_error.map(|e| e.to_string()).unwrap_or_default(),
        });
    }

    let any_converged = runs.iter().any(|(_, r)| r.record.converged);
    if !any_converged {
        warn!("none of {} restarts converged within {} EM steps", seeds.len(), config.max_em_steps);
    }
    let best = runs
        .iter()
        .enumerate()
        .filter(|(_, (_, r))| r.record.converged || !any_converged)
        .fold(None::<(usize, f64)>, |acc, (j, (_, r))| match acc {
            Some((_, ll)) if ll >= r.record.log_likelihood => acc,
            _ => Some((j, r.record.log_likelihood)),
        })
        .map(|(j, _)| j)
        .expect("at least one restart");

    let (restart_index, chosen) = runs.into_iter().nth(best).expect("index in range");
    let assignment = chosen.marginals.assignment();
    let nmi_vs_metadata = match metadata {
        MetadataColumn::Discrete(d) => Some(nmi(&assignment, d.values()).unwrap_or(0.0)),
        MetadataColumn::Ordered(_) => None,
    };
    Ok(FitResult {
        theta: chosen.theta,
        prior: chosen.prior,
        encoding: metadata.encoding(),
        marginals: chosen.marginals,
        assignment,
        log_likelihood: chosen.record.log_likelihood,
        converged: chosen.record.converged,
        em_steps: chosen.record.em_steps,
        restart_index,
        nmi_vs_metadata,
        restarts,
    })
}

/// Community probabilities predicted from a metadata value alone.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    /// Set when the value could not be used and a uniform vector was returned.
    pub warning: Option<String>,
}

/// Evaluates a fitted prior at a raw metadata value: a category label for
/// discrete metadata, or a number for ordered metadata (rescaled with the
/// training transform and clamped into `[0, 1]`). Unknown labels yield a
/// uniform distribution with a warning.
pub fn predict_from_metadata(prior: &Prior, encoding: &MetadataEncoding, value: &str) -> Result<Prediction, FitError> {
    let k = prior.communities();
    match (prior, encoding) {
        (Prior::Discrete(_), MetadataEncoding::Discrete { labels }) => match labels.iter().position(|l| l == value) {
            Some(c) => Ok(Prediction {
                probabilities: prior.eval(MetaValue::Category(c))?,
                warning: None,
            }),
            None => Ok(Prediction {
                probabilities: vec![1.0 / k as f64; k],
                warning: Some(format!("unknown category {value:?}; returning a uniform prior")),
            }),
        },
        (Prior::Bernstein(_), MetadataEncoding::Ordered { rescale }) => {
            let raw: f64 = value
                .trim()
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or(FitError::Prior(PriorError::KindMismatch))?;
            Ok(Prediction {
                probabilities: prior.eval(MetaValue::Scalar(rescale.apply(raw)))?,
                warning: None,
            })
        }
        _ => Err(FitError::Prior(PriorError::KindMismatch)),
    }
}
