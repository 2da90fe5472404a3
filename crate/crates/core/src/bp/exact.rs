//! Brute-force posterior by enumerating every community assignment.
//!
//! Uses the full Bernoulli likelihood over all node pairs, with no sparse
//! approximation, so it serves as the reference for belief propagation and
//! the Bethe likelihood on small instances.

use ndarray::{Array2, ArrayView2};

use super::{check_prior, check_theta, BpError, Marginals};
use crate::affinity::BlockAffinity;
use crate::graph::Graph;

/// Largest number of assignments `k^n` the enumeration accepts.
pub const MAX_ENUMERATION_STATES: usize = 1 << 24;

struct Enumeration {
    marginals: Marginals,
    log_evidence: f64,
}

fn enumerate(graph: &Graph, theta: &BlockAffinity, prior: ArrayView2<f64>) -> Result<Enumeration, BpError> {
    let k = check_prior(graph, prior)?;
    check_theta(theta, k)?;
    let n = graph.node_count();
    let states = (k as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if states > MAX_ENUMERATION_STATES as u128 {
        return Err(BpError::TooLarge {
            states,
            limit: MAX_ENUMERATION_STATES,
        });
    }

    // log factor table per unordered pair
    let degrees = graph.degrees();
    let kk = k * k;
    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    let mut tables = Vec::with_capacity(pairs.capacity() * kk);
    for u in 0..n {
        for v in (u + 1)..n {
            let dd = (degrees[u] * degrees[v]) as f64;
            let linked = graph.has_edge(u, v);
            if dd == 0.0 {
                continue;
            }
            pairs.push((u, v));
            for s in 0..k {
                for t in 0..k {
                    let p = dd * theta.theta[[s, t]];
                    if p >= 1.0 {
                        return Err(BpError::ProbabilityAboveOne { u, v, p });
                    }
                    tables.push(if linked { p.ln() } else { (-p).ln_1p() });
                }
            }
        }
    }
    let log_prior = prior.mapv(f64::ln);

    let edge_index: Vec<(usize, usize)> = graph.edges().to_vec();
    let mut node_acc = Array2::<f64>::zeros((n, k));
    let mut edge_acc = vec![0.0; edge_index.len() * kk];
    let mut total = 0.0;
    let mut scale = f64::NEG_INFINITY;
    let mut assignment = vec![0usize; n];

    for _ in 0..states as usize {
        let mut logw = 0.0;
        for (u, &s) in assignment.iter().enumerate() {
            logw += log_prior[[u, s]];
        }
        if logw > f64::NEG_INFINITY {
            for (p, &(u, v)) in pairs.iter().enumerate() {
                logw += tables[p * kk + assignment[u] * k + assignment[v]];
            }
        }

        if logw > f64::NEG_INFINITY {
            if logw > scale {
                let shrink = (scale - logw).exp();
                total *= shrink;
                node_acc.mapv_inplace(|x| x * shrink);
                edge_acc.iter_mut().for_each(|x| *x *= shrink);
                scale = logw;
            }
            let w = (logw - scale).exp();
            total += w;
            for (u, &s) in assignment.iter().enumerate() {
                node_acc[[u, s]] += w;
            }
            for (i, &(u, v)) in edge_index.iter().enumerate() {
                edge_acc[i * kk + assignment[u] * k + assignment[v]] += w;
            }
        }

        // odometer increment
        for digit in assignment.iter_mut() {
            *digit += 1;
            if *digit < k {
                break;
            }
            *digit = 0;
        }
    }

    if !(total > 0.0) {
        return Err(BpError::Underflow { node: 0 });
    }
    node_acc.mapv_inplace(|x| x / total);
    edge_acc.iter_mut().for_each(|x| *x /= total);
    Ok(Enumeration {
        marginals: Marginals {
            k,
            node: node_acc,
            edge: edge_acc,
        },
        log_evidence: scale + total.ln(),
    })
}

/// Exact node and edge marginals of the posterior over assignments.
pub fn exact_marginals(graph: &Graph, theta: &BlockAffinity, prior: ArrayView2<f64>) -> Result<Marginals, BpError> {
    enumerate(graph, theta, prior).map(|e| e.marginals)
}

/// Exact `ln P(A | theta, prior)`, summing over all assignments.
pub fn exact_log_likelihood(graph: &Graph, theta: &BlockAffinity, prior: ArrayView2<f64>) -> Result<f64, BpError> {
    enumerate(graph, theta, prior).map(|e| e.log_evidence)
}
