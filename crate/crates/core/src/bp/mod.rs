//! Belief propagation for the posterior over community assignments.
//!
//! Messages live on directed edges. The message from `u` to `v` is
//!
//! ```text
//! eta[u->v][s] ∝ prior_u[s] * exp(-h_u[s]) * prod_{w in N(u) \ v} sum_t theta[s][t] eta[w->u][t]
//! ```
//!
//! where the external field `h_u[s] = d_u * sum_t theta[s][t] * D[t]`, with
//! `D[t] = sum_w d_w q_w[t]`, stands in for the absent edges of a sparse
//! graph (`1 - p_uv ≈ exp(-d_u d_v theta)`). The field is updated whenever a
//! node belief changes, within the sweep. Sweeps write messages back
//! immediately and visit nodes in a seeded random order, drawn once when the
//! messages are initialized. Index order would let the node numbering pick
//! the split whenever groups are laid out contiguously.

mod exact;

pub use exact::{exact_log_likelihood, exact_marginals, MAX_ENUMERATION_STATES};

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::affinity::BlockAffinity;
use crate::graph::Graph;

#[derive(Debug, Error, PartialEq)]
pub enum BpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("node {node}: prior row is not a probability vector")]
    InvalidPrior { node: usize },
    #[error("message from node {node} underflowed to zero; block affinities are degenerate")]
    Underflow { node: usize },
    #[error("exact enumeration needs {states} states, above the limit of {limit}")]
    TooLarge { states: u128, limit: usize },
    #[error("edge probability {p} >= 1 between nodes {u} and {v}")]
    ProbabilityAboveOne { u: usize, v: usize, p: f64 },
    #[error("invalid options: {0}")]
    Options(String),
}

/// Settings for [`run_bp`] and [`BeliefPropagation::run`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpOptions {
    pub max_steps: usize,
    pub tol: f64,
    /// Fraction of the previous message kept on each update; 0 disables damping.
    pub damping: f64,
    /// Relative size of the multiplicative noise on initial messages.
    pub init_noise: f64,
}

impl Default for BpOptions {
    fn default() -> Self {
        BpOptions {
            max_steps: 20,
            tol: 1e-6,
            damping: 0.0,
            init_noise: 0.1,
        }
    }
}

/// Message state: one probability vector per directed edge plus the current
/// node beliefs that feed the external field.
#[derive(Debug, Clone, PartialEq)]
pub struct Messages {
    k: usize,
    edge: Vec<f64>,
    node: Array2<f64>,
    /// Node visiting order for every sweep.
    order: Vec<usize>,
}

impl Messages {
    pub fn communities(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.edge.len() / self.k.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.edge.is_empty()
    }

    /// Message carried by directed edge `slot` (see [`Graph::slots`]).
    pub fn get(&self, slot: usize) -> &[f64] {
        &self.edge[slot * self.k..(slot + 1) * self.k]
    }

    pub fn beliefs(&self) -> ArrayView2<'_, f64> {
        self.node.view()
    }
}

/// Node marginals `q[u][s]` and pair marginals `q[uv][s][t]` for every edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    k: usize,
    node: Array2<f64>,
    /// Row-major `k x k` block per edge, in [`Graph::edges`] order.
    edge: Vec<f64>,
}

impl Marginals {
    pub fn new(node: Array2<f64>, edge: Vec<f64>) -> Result<Self, BpError> {
        let k = node.ncols();
        if k == 0 || edge.len() % (k * k) != 0 {
            return Err(BpError::Dimension("edge marginals are not k x k blocks".into()));
        }
        Ok(Marginals { k, node, edge })
    }

    /// Hard marginals: node `u` sits in `assignment[u]` with certainty.
    pub fn from_assignment(graph: &Graph, assignment: &[usize], k: usize) -> Self {
        let n = graph.node_count();
        let mut node = Array2::zeros((n, k));
        for (u, &s) in assignment.iter().enumerate() {
            node[[u, s]] = 1.0;
        }
        let mut edge = vec![0.0; graph.edge_count() * k * k];
        for (i, &(u, v)) in graph.edges().iter().enumerate() {
            edge[i * k * k + assignment[u] * k + assignment[v]] = 1.0;
        }
        Marginals { k, node, edge }
    }

    pub fn communities(&self) -> usize {
        self.k
    }

    pub fn node(&self) -> ArrayView2<'_, f64> {
        self.node.view()
    }

    pub fn into_node(self) -> Array2<f64> {
        self.node
    }

    pub fn edge_count(&self) -> usize {
        self.edge.len() / (self.k * self.k)
    }

    /// Joint distribution of the `i`-th edge `(u, v)`, `u < v`, with entry
    /// `s * k + t` for `s_u = s, s_v = t`.
    pub fn edge(&self, i: usize) -> &[f64] {
        let kk = self.k * self.k;
        &self.edge[i * kk..(i + 1) * kk]
    }

    /// Most probable community per node, ties to the lowest index.
    pub fn assignment(&self) -> Vec<usize> {
        self.node
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (s, &q) in row.iter().enumerate() {
                    if q > row[best] {
                        best = s;
                    }
                }
                best
            })
            .collect()
    }
}

fn check_prior(graph: &Graph, prior: ArrayView2<f64>) -> Result<usize, BpError> {
    if prior.nrows() != graph.node_count() {
        return Err(BpError::Dimension(format!(
            "{} prior rows for {} nodes",
            prior.nrows(),
            graph.node_count()
        )));
    }
    let k = prior.ncols();
    if k == 0 {
        return Err(BpError::Dimension("zero communities".into()));
    }
    for (u, row) in prior.rows().into_iter().enumerate() {
        if row.iter().any(|&p| !(p >= 0.0)) || (row.sum() - 1.0).abs() > 1e-9 {
            return Err(BpError::InvalidPrior { node: u });
        }
    }
    Ok(k)
}

fn check_theta(theta: &BlockAffinity, k: usize) -> Result<(), BpError> {
    if theta.communities() != k {
        return Err(BpError::Dimension(format!(
            "theta is {0}x{0} but priors have {1} communities",
            theta.communities(),
            k
        )));
    }
    Ok(())
}

/// Initial messages: each `u -> v` message is `u`'s prior with every entry
/// scaled by `1 + noise * U(-1, 1)`, then renormalized. The sweep order is a
/// permutation drawn from the same stream.
pub fn init_messages(
    graph: &Graph,
    prior: ArrayView2<f64>,
    seed: u64,
    noise: f64,
) -> Result<Messages, BpError> {
    let k = check_prior(graph, prior)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edge = vec![0.0; graph.directed_edge_count() * k];
    for u in 0..graph.node_count() {
        let p = prior.row(u);
        for slot in graph.slots(u) {
            let msg = &mut edge[slot * k..(slot + 1) * k];
            for s in 0..k {
                let jitter = if noise > 0.0 {
                    1.0 + noise * rng.gen_range(-1.0..1.0)
                } else {
                    1.0
                };
                msg[s] = p[s] * jitter;
            }
            let sum: f64 = msg.iter().sum();
            msg.iter_mut().for_each(|m| *m /= sum);
        }
    }
    let mut order: Vec<usize> = (0..graph.node_count()).collect();
    order.shuffle(&mut rng);
    Ok(Messages {
        k,
        edge,
        node: prior.to_owned(),
        order,
    })
}

/// Rows multiplied into a belief between underflow checks. Each row is at
/// least `min(theta) / max(theta)`, so with the log-domain cutoff below the
/// running product cannot underflow within one batch.
const RESCALE_EVERY: usize = 4;
/// Log-domain arithmetic is always used when `k` reaches this size.
const LOG_DOMAIN_MIN_K: usize = 8;
/// ... or when some `|ln theta|` exceeds this.
const LOG_DOMAIN_MAX_LOG_THETA: f64 = 30.0;

struct SweepContext {
    theta: Vec<f64>,
    log_domain: bool,
    /// `sum_t theta[s][t] D[t]`, multiplied by `d_u` per node. Kept current
    /// as beliefs change during the sweep; refreshing it only between sweeps
    /// lets the community sizes overshoot and oscillate.
    field: Vec<f64>,
    /// `theta / max(theta)`, row-major.
    scaled: Vec<f64>,
    incoming: Vec<f64>,
    full: Vec<f64>,
    cavity: Vec<f64>,
}

impl SweepContext {
    fn new(theta: &BlockAffinity, messages: &Messages, graph: &Graph) -> Self {
        let k = messages.k;
        let flat = theta.flat();
        let log_domain = k >= LOG_DOMAIN_MIN_K
            || flat.iter().any(|t| t.ln().abs() > LOG_DOMAIN_MAX_LOG_THETA);
        let mut degree_mass = vec![0.0; k];
        for u in 0..graph.node_count() {
            let d = graph.degree(u) as f64;
            if d > 0.0 {
                for (t, m) in degree_mass.iter_mut().enumerate() {
                    *m += d * messages.node[[u, t]];
                }
            }
        }
        let top = flat.iter().copied().fold(0.0, f64::max);
        let scaled = flat.iter().map(|t| t / top).collect();
        let field = (0..k)
            .map(|s| (0..k).map(|t| flat[s * k + t] * degree_mass[t]).sum())
            .collect();
        let max_degree = (0..graph.node_count()).map(|u| graph.degree(u)).max().unwrap_or(0);
        SweepContext {
            theta: flat,
            log_domain,
            field,
            scaled,
            incoming: vec![0.0; max_degree * k],
            full: vec![0.0; k],
            cavity: vec![0.0; k],
        }
    }

    /// Fills the first `d_u` rows of `incoming` with
    /// `sum_t theta[s][t] eta[w->u][t]` per neighbor, using `theta` scaled by
    /// its largest entry. Rows are left unnormalized; only ratios within a
    /// row matter.
    fn gather(&mut self, k: usize, graph: &Graph, edge: &[f64], u: usize) {
        let slots = graph.slots(u);
        let rows = &mut self.incoming[..slots.len() * k];
        for (row, slot) in rows.chunks_exact_mut(k).zip(slots) {
            let back = graph.reverse(slot);
            let eta = &edge[back * k..back * k + k];
            for (r, th) in row.iter_mut().zip(self.scaled.chunks_exact(k)) {
                let mut acc = 0.0;
                for t in 0..k {
                    acc += th[t] * eta[t];
                }
                *r = acc;
            }
        }
    }

    /// Linear-domain product of prior, field and all incoming factors.
    /// Returns false if a component underflowed where the prior is nonzero.
    fn full_linear(&mut self, k: usize, prior: &[f64], degree: usize) -> bool {
        let full = &mut self.full[..k];
        for s in 0..k {
            full[s] = prior[s] * (-(degree as f64) * self.field[s]).exp();
        }
        for (i, row) in self.incoming[..degree * k].chunks_exact(k).enumerate() {
            for s in 0..k {
                full[s] *= row[s];
            }
            if i % RESCALE_EVERY == RESCALE_EVERY - 1 {
                let max = full.iter().copied().fold(0.0, f64::max);
                if max == 0.0 {
                    return false;
                }
                if max < 1e-150 {
                    full.iter_mut().for_each(|x| *x /= max);
                }
            }
        }
        (0..k).all(|s| prior[s] == 0.0 || (full[s] > 0.0 && full[s].is_finite()))
    }

    fn full_log(&mut self, k: usize, prior: &[f64], degree: usize) {
        for s in 0..k {
            self.full[s] = prior[s].ln() - degree as f64 * self.field[s];
        }
        for row in self.incoming[..degree * k].chunks_exact(k) {
            for s in 0..k {
                self.full[s] += row[s].ln();
            }
        }
    }
}

/// Normalizes `v` in place; false if it has no positive finite mass.
fn normalize(v: &mut [f64]) -> bool {
    let sum: f64 = v.iter().sum();
    if !(sum > 0.0 && sum.is_finite()) {
        return false;
    }
    let inv = 1.0 / sum;
    v.iter_mut().for_each(|x| *x *= inv);
    true
}

/// Exponentiates log weights in place relative to their maximum and normalizes.
fn normalize_log(v: &mut [f64]) -> bool {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x = (*x - max).exp());
    normalize(v)
}

/// One asynchronous pass over all nodes in the messages' sweep order, updating every
/// outgoing message and the node belief. Returns the largest absolute change
/// of any message entry.
pub fn bp_sweep(
    graph: &Graph,
    theta: &BlockAffinity,
    prior: ArrayView2<f64>,
    messages: &mut Messages,
    damping: f64,
) -> Result<f64, BpError> {
    let k = messages.k;
    check_theta(theta, k)?;
    if prior.nrows() != graph.node_count() || prior.ncols() != k {
        return Err(BpError::Dimension("prior table does not match messages".into()));
    }
    if messages.edge.len() != graph.directed_edge_count() * k {
        return Err(BpError::Dimension("messages do not match graph".into()));
    }
    let mut ctx = SweepContext::new(theta, messages, graph);
    let prior_table = prior.as_standard_layout();
    let prior_flat = prior_table.as_slice().expect("standard layout");
    match k {
        2 if !ctx.log_domain => sweep_fixed::<2>(graph, &ctx, prior_flat, messages, damping),
        3 if !ctx.log_domain => sweep_fixed::<3>(graph, &ctx, prior_flat, messages, damping),
        4 if !ctx.log_domain => sweep_fixed::<4>(graph, &ctx, prior_flat, messages, damping),
        _ => sweep_nodes(k, graph, &mut ctx, prior_flat, messages, damping),
    }
}

/// Linear-domain sweep for a community count known at compile time. A node
/// whose product underflows is redone in the log domain.
fn sweep_fixed<const K: usize>(
    graph: &Graph,
    ctx: &SweepContext,
    prior_flat: &[f64],
    messages: &mut Messages,
    damping: f64,
) -> Result<f64, BpError> {
    let mut scaled = [[0.0; K]; K];
    let mut theta = [[0.0; K]; K];
    for s in 0..K {
        for t in 0..K {
            scaled[s][t] = ctx.scaled[s * K + t];
            theta[s][t] = ctx.theta[s * K + t];
        }
    }
    let mut field = [0.0; K];
    field.copy_from_slice(&ctx.field);
    let mut incoming: Vec<[f64; K]> = Vec::new();
    let node_flat = messages.node.as_slice_mut().expect("standard layout");
    let edge = &mut messages.edge;
    let mut max_delta = 0.0f64;

    for &u in &messages.order {
        let slots = graph.slots(u);
        let d = slots.len() as f64;
        let prior = &prior_flat[u * K..u * K + K];
        let mut full = [0.0; K];
        for s in 0..K {
            full[s] = prior[s] * (-d * field[s]).exp();
        }
        let mut linear = true;
        incoming.clear();
        for (i, slot) in slots.clone().enumerate() {
            let back = graph.reverse(slot);
            let eta = &edge[back * K..back * K + K];
            let mut row = [0.0; K];
            for s in 0..K {
                let mut acc = 0.0;
                for t in 0..K {
                    acc += scaled[s][t] * eta[t];
                }
                row[s] = acc;
                full[s] *= acc;
            }
            incoming.push(row);
            if i % RESCALE_EVERY == RESCALE_EVERY - 1 {
                let max = full.iter().copied().fold(0.0, f64::max);
                if max == 0.0 {
                    linear = false;
                } else if max < 1e-150 {
                    full.iter_mut().for_each(|x| *x /= max);
                }
            }
        }
        linear = linear && (0..K).all(|s| prior[s] == 0.0 || (full[s] > 0.0 && full[s].is_finite()));
        if !linear {
            for s in 0..K {
                full[s] = prior[s].ln() - d * field[s] + incoming.iter().map(|r| r[s].ln()).sum::<f64>();
            }
        }

        for (row, slot) in incoming.iter().zip(slots) {
            let mut cavity = [0.0; K];
            if linear {
                for s in 0..K {
                    cavity[s] = full[s] / row[s];
                }
            } else {
                for s in 0..K {
                    cavity[s] = full[s] - row[s].ln();
                }
                let max = cavity.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if !max.is_finite() {
                    return Err(BpError::Underflow { node: u });
                }
                cavity.iter_mut().for_each(|c| *c = (*c - max).exp());
            }
            let sum: f64 = cavity.iter().sum();
            if !(sum > 0.0 && sum.is_finite()) {
                return Err(BpError::Underflow { node: u });
            }
            let inv = 1.0 / sum;
            let msg = &mut edge[slot * K..slot * K + K];
            for s in 0..K {
                let c = cavity[s] * inv;
                let next = if damping > 0.0 {
                    damping * msg[s] + (1.0 - damping) * c
                } else {
                    c
                };
                max_delta = max_delta.max((next - msg[s]).abs());
                msg[s] = next;
            }
        }

        let ok = if linear {
            normalize(&mut full)
        } else {
            normalize_log(&mut full)
        };
        if !ok {
            return Err(BpError::Underflow { node: u });
        }
        let node_row = &mut node_flat[u * K..u * K + K];
        if d > 0.0 {
            for t in 0..K {
                let shift = d * (full[t] - node_row[t]);
                if shift != 0.0 {
                    for s in 0..K {
                        field[s] += theta[s][t] * shift;
                    }
                }
            }
        }
        node_row.copy_from_slice(&full);
    }
    Ok(max_delta)
}

fn sweep_nodes(
    k: usize,
    graph: &Graph,
    ctx: &mut SweepContext,
    prior_flat: &[f64],
    messages: &mut Messages,
    damping: f64,
) -> Result<f64, BpError> {
    let mut max_delta = 0.0f64;
    let node_flat = messages.node.as_slice_mut().expect("standard layout");
    let edge = &mut messages.edge;

    for &u in &messages.order {
        let prior_row = &prior_flat[u * k..u * k + k];
        let degree = graph.degree(u);
        ctx.gather(k, graph, edge, u);

        let log_domain = ctx.log_domain || !ctx.full_linear(k, prior_row, degree);
        if log_domain {
            ctx.full_log(k, prior_row, degree);
        }

        let SweepContext {
            incoming,
            full,
            cavity,
            field,
            theta: flat_theta,
            ..
        } = &mut *ctx;
        let full = &mut full[..k];
        let cavity = &mut cavity[..k];
        for (factor, slot) in incoming[..degree * k].chunks_exact(k).zip(graph.slots(u)) {
            let ok = if log_domain {
                for s in 0..k {
                    cavity[s] = full[s] - factor[s].ln();
                }
                normalize_log(cavity)
            } else {
                let mut sum = 0.0;
                for s in 0..k {
                    cavity[s] = full[s] / factor[s];
                    sum += cavity[s];
                }
                let inv = 1.0 / sum;
                for c in cavity.iter_mut() {
                    *c *= inv;
                }
                sum > 0.0 && sum.is_finite()
            };
            if !ok {
                return Err(BpError::Underflow { node: u });
            }
            let msg = &mut edge[slot * k..slot * k + k];
            for s in 0..k {
                let next = if damping > 0.0 {
                    damping * msg[s] + (1.0 - damping) * cavity[s]
                } else {
                    cavity[s]
                };
                max_delta = max_delta.max((next - msg[s]).abs());
                msg[s] = next;
            }
        }

        let ok = if log_domain {
            normalize_log(full)
        } else {
            normalize(full)
        };
        if !ok {
            return Err(BpError::Underflow { node: u });
        }
        let node_row = &mut node_flat[u * k..u * k + k];
        if degree > 0 {
            for t in 0..k {
                let shift = degree as f64 * (full[t] - node_row[t]);
                if shift != 0.0 {
                    for s in 0..k {
                        field[s] += flat_theta[s * k + t] * shift;
                    }
                }
            }
        }
        node_row.copy_from_slice(full);
    }
    Ok(max_delta)
}

/// Summary of a belief-propagation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpRun {
    pub sweeps: usize,
    pub max_delta: f64,
    pub converged: bool,
}

/// Reusable belief-propagation state. Keeping it across EM iterations lets
/// each E-step start from the previous messages.
#[derive(Debug, Clone)]
pub struct BeliefPropagation<'g> {
    graph: &'g Graph,
    messages: Messages,
}

impl<'g> BeliefPropagation<'g> {
    pub fn new(graph: &'g Graph, prior: ArrayView2<f64>, seed: u64, noise: f64) -> Result<Self, BpError> {
        Ok(BeliefPropagation {
            graph,
            messages: init_messages(graph, prior, seed, noise)?,
        })
    }

    pub fn messages(&self) -> &Messages {
        &self.messages
    }

    pub fn sweep(&mut self, theta: &BlockAffinity, prior: ArrayView2<f64>, damping: f64) -> Result<f64, BpError> {
        bp_sweep(self.graph, theta, prior, &mut self.messages, damping)
    }

    /// Sweeps until the largest message change drops below `opts.tol` or
    /// `opts.max_steps` sweeps have run. Not converging is not an error.
    pub fn run(&mut self, theta: &BlockAffinity, prior: ArrayView2<f64>, opts: &BpOptions) -> Result<BpRun, BpError> {
        if opts.max_steps == 0 || !(opts.tol > 0.0) || !(0.0..1.0).contains(&opts.damping) {
            return Err(BpError::Options(format!("{opts:?}")));
        }
        let mut run = BpRun {
            sweeps: 0,
            max_delta: f64::INFINITY,
            converged: false,
        };
        while run.sweeps < opts.max_steps {
            run.max_delta = self.sweep(theta, prior, opts.damping)?;
            run.sweeps += 1;
            if run.max_delta < opts.tol {
                run.converged = true;
                break;
            }
        }
        Ok(run)
    }

    /// Node beliefs and edge pair marginals
    /// `q[uv][s][t] ∝ theta[s][t] eta[u->v][s] eta[v->u][t]`.
    pub fn marginals(&self, theta: &BlockAffinity) -> Result<Marginals, BpError> {
        let k = self.messages.k;
        check_theta(theta, k)?;
        let flat = theta.flat();
        let kk = k * k;
        let mut edge = vec![0.0; self.graph.edge_count() * kk];
        for (i, &(u, _)) in self.graph.edges().iter().enumerate() {
            let slot = self.graph.edge_slot(i);
            let forward = self.messages.get(slot);
            let backward = self.messages.get(self.graph.reverse(slot));
            let block = &mut edge[i * kk..(i + 1) * kk];
            for s in 0..k {
                for t in 0..k {
                    block[s * k + t] = flat[s * k + t] * forward[s] * backward[t];
                }
            }
            if !normalize(block) {
                return Err(BpError::Underflow { node: u });
            }
        }
        Ok(Marginals {
            k,
            node: self.messages.node.clone(),
            edge,
        })
    }
}

/// Result of [`run_bp`].
#[derive(Debug, Clone, PartialEq)]
pub struct BpOutcome {
    pub marginals: Marginals,
    pub run: BpRun,
}

/// Runs belief propagation from seeded initial messages and returns the
/// marginals. Isolated nodes keep their prior.
pub fn run_bp(
    graph: &Graph,
    theta: &BlockAffinity,
    prior: ArrayView2<f64>,
    seed: u64,
    opts: &BpOptions,
) -> Result<BpOutcome, BpError> {
    let mut bp = BeliefPropagation::new(graph, prior, seed, opts.init_noise)?;
    check_theta(theta, bp.messages.k)?;
    let run = bp.run(theta, prior, opts)?;
    Ok(BpOutcome {
        marginals: bp.marginals(theta)?,
        run,
    })
}
