//! Brute-force references shared by the integration tests and the
//! acceptance harness.
#![allow(dead_code)]

use annet_core::bp::{exact_log_likelihood, exact_marginals};
use annet_core::em::{bethe_omitted_terms, bethe_with_prior_values, m_step_theta};
use annet_core::prior::{m_step_gamma_discrete, m_step_gamma_ordered, InnerLoop};
use annet_core::{run_bp, BernsteinPrior, BlockAffinity, BpOptions, DiscreteMetadata, Graph, Marginals, OrderedMetadata};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Maximizes a unimodal `f` on `[lo, hi]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        }
        if hi - lo < 1e-14 * (1.0 + lo.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Uniform random labelled tree on `n` nodes (random attachment, shuffled ids).
pub fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> Graph {
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    let edges: Vec<(usize, usize)> = (1..n).map(|i| (ids[i], ids[rng.gen_range(0..i)])).collect();
    Graph::from_edges(n, &edges).unwrap()
}

/// Symmetric positive affinities `scale * exp(U[-1.5, 1.5])`.
pub fn random_theta(rng: &mut ChaCha8Rng, k: usize, scale: f64) -> BlockAffinity {
    let mut theta = Array2::zeros((k, k));
    for s in 0..k {
        for t in s..k {
            let v = scale * rng.gen_range(-1.5f64..1.5).exp();
            theta[[s, t]] = v;
            theta[[t, s]] = v;
        }
    }
    BlockAffinity::new(theta).unwrap()
}

/// Random strictly positive `n x k` stochastic table.
pub fn random_prior(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Array2<f64> {
    let mut p = Array2::from_shape_fn((n, k), |_| rng.gen_range(0.05..1.0));
    for mut row in p.rows_mut() {
        let sum = row.sum();
        row /= sum;
    }
    p
}

pub struct TreeCase {
    pub n: usize,
    pub k: usize,
    pub marginal_error: f64,
    pub ll_error: f64,
}

/// BP against enumeration on one random tree. Affinities are tiny so that
/// the sparse treatment of absent edges is exact to well below 1e-6.
pub fn tree_case(seed: u64) -> TreeCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=12);
    let k = if seed % 2 == 0 { 2 } else { 3 };
    let graph = random_tree(&mut rng, n);
    let theta = random_theta(&mut rng, k, 1e-11);
    let prior = random_prior(&mut rng, n, k);
    let opts = BpOptions {
        max_steps: 200,
        tol: 1e-15,
        damping: 0.0,
        init_noise: 0.1,
    };
    let bp = run_bp(&graph, &theta, prior.view(), seed, &opts).unwrap().marginals;
    let exact = exact_marginals(&graph, &theta, prior.view()).unwrap();
    let marginal_error = bp
        .node()
        .iter()
        .zip(exact.node().iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let bethe = bethe_with_prior_values(&graph, &theta, prior.view(), &bp).unwrap()
        + bethe_omitted_terms(&graph, &theta, &bp);
    let exact_ll = exact_log_likelihood(&graph, &theta, prior.view()).unwrap();
    TreeCase {
        n,
        k,
        marginal_error,
        ll_error: (bethe - exact_ll).abs(),
    }
}

/// Random graph on `n` nodes with at least one edge.
pub fn random_small_graph(rng: &mut ChaCha8Rng, n: usize) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.gen_bool(0.5) {
                edges.push((u, v));
            }
        }
    }
    if edges.is_empty() {
        edges.push((0, 1));
    }
    Graph::from_edges(n, &edges).unwrap()
}

pub struct MStepCase {
    /// Largest of the absolute and relative differences over theta entries.
    pub theta_error: f64,
    pub gamma_discrete_error: f64,
    pub gamma_ordered_error: f64,
}

/// Affinity part of the expected log-likelihood for one symmetric entry,
/// `a ln theta - b theta`, with `a` and `b` summed over node pairs directly.
fn theta_bound_coefficients(graph: &Graph, marginals: &Marginals, s: usize, t: usize) -> (f64, f64) {
    let k = marginals.communities();
    let node = marginals.node();
    let mut a = 0.0;
    for i in 0..graph.edge_count() {
        let q = marginals.edge(i);
        a += if s == t { q[s * k + s] } else { q[s * k + t] + q[t * k + s] };
    }
    let n = graph.node_count();
    let mut b = 0.0;
    for u in 0..n {
        for v in 0..n {
            let dd = (graph.degree(u) * graph.degree(v)) as f64;
            b += dd * node[[u, s]] * node[[v, t]];
        }
    }
    if s == t {
        b *= 0.5;
    }
    (a, b)
}

fn rel_abs(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.max(d / b.abs())
}

/// Closed-form M-step against numerical maximization of the bound, with
/// the marginals taken from BP on a random small graph (k = 2).
pub fn m_step_case(seed: u64) -> MStepCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 2;
    let n = rng.gen_range(3..=6);
    let graph = random_small_graph(&mut rng, n);
    let theta = random_theta(&mut rng, k, 0.1);
    let prior = random_prior(&mut rng, n, k);
    let marginals = run_bp(&graph, &theta, prior.view(), seed, &BpOptions::default())
        .unwrap()
        .marginals;
    let node = marginals.node();

    let closed = m_step_theta(&graph, &marginals).unwrap().theta;
    let mut theta_error = 0.0f64;
    for s in 0..k {
        for t in s..k {
            let (a, b) = theta_bound_coefficients(&graph, &marginals, s, t);
            let log_best = golden_max(|l| a * l - b * l.exp(), -40.0, 40.0);
            theta_error = theta_error.max(rel_abs(log_best.exp(), closed.theta[[s, t]]));
        }
    }

    // discrete prior: every category used at least once
    let categories = rng.gen_range(1..=3.min(n));
    let mut values: Vec<usize> = (0..n).map(|u| if u < categories { u } else { rng.gen_range(0..categories) }).collect();
    values.shuffle(&mut rng);
    let meta = DiscreteMetadata::from_indices(values.clone(), categories).unwrap();
    let gamma = m_step_gamma_discrete(node, &meta).unwrap().gamma;
    let mut gamma_discrete_error = 0.0f64;
    for x in 0..categories {
        let f = |p: f64| {
            values
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == x)
                .map(|(u, _)| node[[u, 0]] * p.ln() + node[[u, 1]] * (1.0 - p).ln())
                .sum::<f64>()
        };
        let best = golden_max(f, 1e-12, 1.0 - 1e-12);
        gamma_discrete_error = gamma_discrete_error.max((best - gamma[[0, x]]).abs());
    }

    // ordered prior, Bernstein degree 1, distinct values
    let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let ordered = OrderedMetadata::from_unit(xs.iter().map(|&x| Some(x)).collect());
    let update = m_step_gamma_ordered(
        node,
        &ordered,
        &BernsteinPrior::uniform(k, 1),
        InnerLoop {
            tol: 1e-14,
            max_iter: 1_000_000,
        },
    )
    .unwrap();
    let objective = |a: f64, b: f64| {
        xs.iter()
            .enumerate()
            .map(|(u, &x)| {
                let p0 = a * (1.0 - x) + b * x;
                node[[u, 0]] * p0.ln() + node[[u, 1]] * (1.0 - p0).ln()
            })
            .sum::<f64>()
    };
    let lo = 1e-12;
    let hi = 1.0 - 1e-12;
    let best_b = |a: f64| golden_max(|b| objective(a, b), lo, hi);
    let a = golden_max(|a| objective(a, best_b(a)), lo, hi);
    let b = best_b(a);
    let g = &update.prior.gamma;
    let gamma_ordered_error = (a - g[[0, 0]]).abs().max((b - g[[0, 1]]).abs());

    MStepCase {
        theta_error,
        gamma_discrete_error,
        gamma_ordered_error,
    }
}
