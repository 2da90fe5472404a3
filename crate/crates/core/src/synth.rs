//! Planted-partition networks with correlated metadata, and the two
//! synthetic experiments built on them: accuracy against structure strength
//! for several metadata match rates, and success rates for recovering a
//! chosen division of a four-group network with and without metadata.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::em::{derive_seed, fit, FitConfig, FitError};
use crate::graph::{Graph, GraphError};
use crate::metadata::{DiscreteMetadata, MetadataColumn, MetadataError};
use crate::metrics::{fraction_correct, MetricsError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Metadata(#[from] MetadataError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Critical value of `c_in - c_out` below which two equal groups cannot be
/// recovered from the network alone.
pub fn detectability_threshold(c_in: f64, c_out: f64) -> f64 {
    (2.0 * (c_in + c_out)).max(0.0).sqrt()
}

/// Community of every node when `n` nodes are cut into `k` contiguous
/// groups, the first `n % k` groups taking one extra node.
pub fn contiguous_groups(n: usize, k: usize) -> Vec<usize> {
    let base = n / k;
    let extra = n % k;
    (0..k)
        .flat_map(|g| std::iter::repeat(g).take(base + usize::from(g < extra)))
        .collect()
}

/// Links every pair `(u, v)` with `v` in `range` (all above `u`)
/// independently with probability `p`, jumping directly between successes.
fn link_range<R: Rng>(u: usize, range: std::ops::Range<usize>, p: f64, rng: &mut R, edges: &mut Vec<(usize, usize)>) {
    if p <= 0.0 || range.is_empty() {
        return;
    }
    if p >= 1.0 {
        edges.extend(range.map(|v| (u, v)));
        return;
    }
    let skip = Geometric::new(p).expect("0 < p < 1");
    let mut v = range.start as u64;
    loop {
        v = v.saturating_add(skip.sample(rng));
        if v >= range.end as u64 {
            break;
        }
        edges.push((u, v as usize));
        v += 1;
    }
}

/// Standard stochastic block model with `k` equal contiguous groups, pair
/// probabilities `c_in / n` within and `c_out / n` between groups.
pub fn generate_sbm(n: usize, k: usize, c_in: f64, c_out: f64, seed: u64) -> Result<(Graph, Vec<usize>), SynthError> {
    if k == 0 || k > n.max(1) {
        return Err(SynthError::Params(format!("need 1 <= k <= n, got k = {k}, n = {n}")));
    }
    if !(c_out >= 0.0) || !(c_in >= 0.0) || !c_in.is_finite() || !c_out.is_finite() {
        return Err(SynthError::Params("c_in and c_out must be finite and non-negative".into()));
    }
    let p_in = c_in / n as f64;
    let p_out = c_out / n as f64;
    if p_in > 1.0 || p_out > 1.0 {
        return Err(SynthError::Params(format!("edge probability above 1 (p_in = {p_in}, p_out = {p_out})")));
    }
    let truth = contiguous_groups(n, k);
    let mut bounds = Vec::with_capacity(k + 1);
    bounds.push(0);
    for g in 0..k {
        bounds.push(bounds[g] + truth.iter().filter(|&&t| t == g).count());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let expected = (n as f64 * (c_in + (k - 1) as f64 * c_out) / (2.0 * k as f64)).ceil() as usize;
    let mut edges = Vec::with_capacity(expected + expected / 8);
    for u in 0..n {
        let own = truth[u];
        for g in own..k {
            let start = if g == own { u + 1 } else { bounds[g] };
            let p = if g == own { p_in } else { p_out };
            link_range(u, start..bounds[g + 1], p, &mut rng, &mut edges);
        }
    }
    Ok((Graph::from_edges(n, &edges)?, truth))
}

/// Metadata equal to `truth[u]` with probability `match_rate`, otherwise
/// drawn uniformly from the other `categories - 1` values.
pub fn generate_metadata(
    truth: &[usize],
    match_rate: f64,
    categories: usize,
    seed: u64,
) -> Result<DiscreteMetadata, SynthError> {
    if !(0.0..=1.0).contains(&match_rate) {
        return Err(SynthError::Params(format!("match rate {match_rate} outside [0, 1]")));
    }
    let communities = truth.iter().max().map_or(0, |m| m + 1);
    if categories < communities {
        return Err(SynthError::Params(format!(
            "{categories} metadata values cannot cover {communities} communities"
        )));
    }
    if categories < 2 && match_rate < 1.0 {
        return Err(SynthError::Params("non-matching values need at least 2 categories".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = truth
        .iter()
        .map(|&t| {
            if rng.gen_bool(match_rate) {
                t
            } else {
                let other = rng.gen_range(0..categories - 1);
                if other >= t {
                    other + 1
                } else {
                    other
                }
            }
        })
        .collect();
    Ok(DiscreteMetadata::from_indices(values, categories)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedParams {
    pub n: usize,
    pub k: usize,
    pub c_in: f64,
    pub c_out: f64,
    pub match_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct PlantedInstance {
    pub graph: Graph,
    pub truth: Vec<usize>,
    pub metadata: MetadataColumn,
    pub params: PlantedParams,
}

impl PlantedInstance {
    /// Network and metadata with `k` metadata values, from independent
    /// streams derived from `params.seed`.
    pub fn generate(params: PlantedParams) -> Result<Self, SynthError> {
        let (graph, truth) = generate_sbm(params.n, params.k, params.c_in, params.c_out, derive_seed(params.seed, 0))?;
        let metadata = generate_metadata(&truth, params.match_rate, params.k, derive_seed(params.seed, 1))?;
        Ok(PlantedInstance {
            graph,
            truth,
            metadata: MetadataColumn::Discrete(metadata),
            params,
        })
    }
}

/// Runs `job` for every index, in parallel unless `sequential` is set.
/// Results come back in index order either way.
fn run_jobs<T, F>(count: usize, sequential: bool, job: F) -> Result<Vec<T>, SynthError>
where
    T: Send,
    F: Fn(usize) -> Result<T, SynthError> + Sync + Send,
{
    if sequential {
        (0..count).map(job).collect()
    } else {
        (0..count).into_par_iter().map(job).collect()
    }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone)]
pub struct Fig1aConfig {
    pub n: usize,
    /// Mean degree `(c_in + c_out) / 2`.
    pub c_mean: f64,
    pub match_rates: Vec<f64>,
    /// Values of `c_in - c_out`.
    pub diffs: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    /// Fit settings; `k` is forced to 2 and the seed is derived per job.
    pub fit: FitConfig,
    /// Run jobs one at a time.
    pub sequential: bool,
}

impl Fig1aConfig {
    pub fn new(seed: u64) -> Self {
        Fig1aConfig {
            n: 10_000,
            c_mean: 8.0,
            match_rates: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            diffs: (0..=8).map(|i| 2.0 * i as f64).collect(),
            reps: 10,
            seed,
            fit: FitConfig::new(2),
            sequential: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig1aRow {
    pub rho: f64,
    pub diff: f64,
    pub mean_acc: f64,
    pub stderr: f64,
    pub reps: usize,
}

/// Accuracy of two-group fits against planted truth on a grid of metadata
/// match rates and structure strengths. Job `i` (cell-major, then
/// repetition) draws everything from `derive_seed(seed, i)`.
pub fn benchmark_fig1a(config: &Fig1aConfig) -> Result<Vec<Fig1aRow>, SynthError> {
    if config.reps == 0 {
        return Err(SynthError::Params("reps must be at least 1".into()));
    }
    if let Some(d) = config.diffs.iter().find(|&&d| !(0.0..=2.0 * config.c_mean).contains(&d)) {
        return Err(SynthError::Params(format!("diff {d} outside [0, 2 c_mean]")));
    }
    let cells: Vec<(f64, f64)> = config
        .match_rates
        .iter()
        .flat_map(|&r| config.diffs.iter().map(move |&d| (r, d)))
        .collect();
    let mut fit_config = config.fit.clone();
    fit_config.k = 2;
    fit_config.reproducible = true;

    let accuracies = run_jobs(cells.len() * config.reps, config.sequential, |job| {
        let (rho, diff) = cells[job / config.reps];
        let seed = derive_seed(config.seed, job as u64);
        let instance = PlantedInstance::generate(PlantedParams {
            n: config.n,
            k: 2,
            c_in: config.c_mean + diff / 2.0,
            c_out: config.c_mean - diff / 2.0,
            match_rate: rho,
            seed,
        })?;
        let mut fc = fit_config.clone();
        fc.seed = derive_seed(seed, 2);
        let result = fit(&instance.graph, &instance.metadata, &fc)?;
        Ok(fraction_correct(&result.assignment, &instance.truth, 2)?)
    })?;

    Ok(cells
        .iter()
        .zip(accuracies.chunks(config.reps))
        .map(|(&(rho, diff), accs)| {
            let (mean_acc, stderr) = mean_and_stderr(accs);
            Fig1aRow {
                rho,
                diff,
                mean_acc,
                stderr,
                reps: config.reps,
            }
        })
        .collect())
}

pub fn write_fig1a_csv<W: Write>(rows: &[Fig1aRow], writer: W) -> Result<(), SynthError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Fig1bConfig {
    pub n: usize,
    pub reps: usize,
    pub c_in: f64,
    pub c_out: f64,
    /// Probability that a node's binary metadata equals its side of the
    /// target division.
    pub agreement: f64,
    /// A repetition succeeds when accuracy against the target exceeds this.
    pub success_above: f64,
    pub seed: u64,
    pub fit: FitConfig,
    pub sequential: bool,
}

impl Fig1bConfig {
    pub fn new(seed: u64) -> Self {
        Fig1bConfig {
            n: 10_000,
            reps: 100,
            c_in: 20.0,
            c_out: 4.0,
            agreement: 0.65,
            success_above: 0.85,
            seed,
            fit: FitConfig::new(2),
            sequential: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig1bRep {
    pub rep: usize,
    pub acc_with: f64,
    pub acc_without: f64,
    pub success_with: bool,
    pub success_without: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig1bResult {
    pub success_with: f64,
    pub success_without: f64,
    pub reps: Vec<Fig1bRep>,
}

/// Four equal groups; the target division puts groups 0 and 1 on one side
/// and 2 and 3 on the other. Each repetition fits two communities with the
/// binary metadata and again with a constant column.
pub fn benchmark_fig1b(config: &Fig1bConfig) -> Result<Fig1bResult, SynthError> {
    if config.reps == 0 {
        return Err(SynthError::Params("reps must be at least 1".into()));
    }
    let mut fit_config = config.fit.clone();
    fit_config.k = 2;
    fit_config.reproducible = true;

    let reps = run_jobs(config.reps, config.sequential, |rep| {
        let seed = derive_seed(config.seed, rep as u64);
        let (graph, groups) = generate_sbm(config.n, 4, config.c_in, config.c_out, derive_seed(seed, 0))?;
        let target: Vec<usize> = groups.iter().map(|g| g / 2).collect();
        let metadata = MetadataColumn::Discrete(generate_metadata(&target, config.agreement, 2, derive_seed(seed, 1))?);
        let blank = MetadataColumn::Discrete(DiscreteMetadata::constant(config.n));

        let mut fc = fit_config.clone();
        fc.seed = derive_seed(seed, 2);
        let with = fit(&graph, &metadata, &fc)?;
        fc.seed = derive_seed(seed, 3);
        let without = fit(&graph, &blank, &fc)?;
        let acc_with = fraction_correct(&with.assignment, &target, 2)?;
        let acc_without = fraction_correct(&without.assignment, &target, 2)?;
        Ok(Fig1bRep {
            rep,
            acc_with,
            acc_without,
            success_with: acc_with > config.success_above,
            success_without: acc_without > config.success_above,
        })
    })?;

    let total = reps.len() as f64;
    Ok(Fig1bResult {
        success_with: reps.iter().filter(|r| r.success_with).count() as f64 / total,
        success_without: reps.iter().filter(|r| r.success_without).count() as f64 / total,
        reps,
    })
}

pub fn write_fig1b_csv<W: Write>(result: &Fig1bResult, writer: W) -> Result<(), SynthError> {
    let mut w = csv::Writer::from_writer(writer);
    for rep in &result.reps {
        w.serialize(rep)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn threshold_values() {
        assert_abs_diff_eq!(detectability_threshold(12.0, 4.0), 32f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(detectability_threshold(12.0, 4.0), 5.6569, epsilon = 1e-4);
        assert_eq!(detectability_threshold(1.5, 0.5), 2.0);
        assert_eq!(detectability_threshold(0.0, 0.0), 0.0);
    }

    #[test]
    fn groups_are_balanced() {
        assert_eq!(contiguous_groups(7, 3), vec![0, 0, 0, 1, 1, 2, 2]);
        assert_eq!(contiguous_groups(4, 2), vec![0, 0, 1, 1]);
    }

    #[test]
    fn empty_and_complete() {
        let (g, truth) = generate_sbm(50, 2, 0.0, 0.0, 1).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(truth.len(), 50);
        let (g, _) = generate_sbm(6, 2, 6.0, 0.0, 1).unwrap();
        assert_eq!(g.edge_count(), 6);
        assert!(g.has_edge(0, 2) && !g.has_edge(2, 3));
    }

    #[test]
    fn sbm_is_seeded() {
        let (a, _) = generate_sbm(500, 2, 10.0, 2.0, 9).unwrap();
        let (b, _) = generate_sbm(500, 2, 10.0, 2.0, 9).unwrap();
        let (c, _) = generate_sbm(500, 2, 10.0, 2.0, 10).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert_ne!(a.edges(), c.edges());
    }

    #[test]
    fn sbm_mean_degree() {
        let (g, truth) = generate_sbm(10_000, 2, 12.0, 4.0, 3).unwrap();
        let mean = 2.0 * g.edge_count() as f64 / 10_000.0;
        assert!((mean - 8.0).abs() < 0.16, "{mean}");
        let within = g.edges().iter().filter(|&&(u, v)| truth[u] == truth[v]).count() as f64;
        // expected within fraction c_in / (c_in + c_out)
        assert!((within / g.edge_count() as f64 - 0.75).abs() < 0.01);
    }

    #[test]
    fn bad_sbm_params() {
        assert!(generate_sbm(10, 2, 11.0, 1.0, 0).is_err());
        assert!(generate_sbm(10, 0, 1.0, 1.0, 0).is_err());
        assert!(generate_sbm(10, 2, -1.0, 1.0, 0).is_err());
    }

    #[test]
    fn metadata_match_rate() {
        let truth = contiguous_groups(10_000, 2);
        let meta = generate_metadata(&truth, 0.7, 2, 5).unwrap();
        let rate = meta.values().iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / 1e4;
        assert!((rate - 0.7).abs() < 0.01, "{rate}");
        let exact = generate_metadata(&truth, 1.0, 2, 5).unwrap();
        assert_eq!(exact.values(), truth.as_slice());
    }

    #[test]
    fn metadata_mismatches_avoid_truth() {
        let truth = contiguous_groups(3000, 3);
        let meta = generate_metadata(&truth, 0.0, 5, 11).unwrap();
        assert!(meta.values().iter().zip(&truth).all(|(a, b)| a != b));
        let mut seen = [0usize; 5];
        for &x in meta.values() {
            seen[x] += 1;
        }
        assert!(seen.iter().all(|&c| c > 0));
        assert!(generate_metadata(&truth, 0.5, 2, 0).is_err());
        assert!(generate_metadata(&[0, 0], 0.5, 1, 0).is_err());
        assert!(generate_metadata(&[0, 1], 1.5, 2, 0).is_err());
    }

    #[test]
    fn csv_columns() {
        let rows = vec![Fig1aRow {
            rho: 0.5,
            diff: 2.0,
            mean_acc: 0.51,
            stderr: 0.01,
            reps: 3,
        }];
        let mut out = Vec::new();
        write_fig1a_csv(&rows, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "rho,diff,mean_acc,stderr,reps\n0.5,2.0,0.51,0.01,3\n");
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        assert_eq!(mean_and_stderr(&[0.5, 0.5, 0.5]), (0.5, 0.0));
        let (m, s) = mean_and_stderr(&[0.0, 1.0]);
        assert_eq!(m, 0.5);
        assert_abs_diff_eq!(s, 0.5, epsilon = 1e-12);
    }
}
