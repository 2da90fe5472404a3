//! JSON fit reports and CSV label/marginal files.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::time::{SystemTime, UNIX_EPOCH};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affinity::BlockAffinity;
use crate::bp::Marginals;
use crate::em::{FitConfig, FitResult};
use crate::metadata::MetadataEncoding;
use crate::prior::{BernsteinPrior, DiscretePrior, Prior, PriorError};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("labels CSV must have header `node,label`, found {0:?}")]
    Header(Vec<String>),
    #[error("labels row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("labels cover nodes 0..{max} but node {missing} is absent")]
    Gap { max: usize, missing: usize },
    #[error("prior in report: {0}")]
    Prior(#[from] PriorError),
    #[error("prior in report: {0}")]
    Shape(String),
}

/// What was run, on which files, with which settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub config: Option<FitConfig>,
    pub seed: u64,
    pub version: String,
    /// Seconds since the Unix epoch when the manifest was created.
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: u64) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: None,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

/// Flat serialized form of a [`Prior`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorReport {
    /// `discrete` or `bernstein`.
    pub kind: String,
    pub k: usize,
    /// Number of metadata categories (discrete only).
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<usize>,
    /// Bernstein degree (ordered only).
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    /// Row-major `k x K` or `k x (N + 1)` table.
    pub gamma: Vec<f64>,
}

impl From<&Prior> for PriorReport {
    fn from(prior: &Prior) -> Self {
        let gamma = prior.gamma();
        let (k, cols) = gamma.dim();
        let (kind, categories, degree) = match prior {
            Prior::Discrete(_) => ("discrete", Some(cols), None),
            Prior::Bernstein(_) => ("bernstein", None, Some(cols - 1)),
        };
        PriorReport {
            kind: kind.to_string(),
            k,
            categories,
            degree,
            gamma: gamma.iter().copied().collect(),
        }
    }
}

impl PriorReport {
    pub fn to_prior(&self) -> Result<Prior, ReportError> {
        let cols = match (self.kind.as_str(), self.categories, self.degree) {
            ("discrete", Some(c), None) => c,
            ("bernstein", None, Some(n)) => n + 1,
            _ => return Err(ReportError::Shape(format!("inconsistent kind {:?} and sizes", self.kind))),
        };
        let gamma = Array2::from_shape_vec((self.k, cols), self.gamma.clone())
            .map_err(|e| ReportError::Shape(e.to_string()))?;
        Ok(match self.kind.as_str() {
            "discrete" => Prior::Discrete(DiscretePrior::new(gamma)?),
            _ => Prior::Bernstein(BernsteinPrior::new(gamma)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub seed: u64,
    /// `None` for a restart that aborted.
    pub ll: Option<f64>,
    pub converged: bool,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Serialized outcome of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub manifest: RunManifest,
    pub config: FitConfig,
    pub k: usize,
    /// Bethe log-likelihood without the terms that do not depend on the
    /// parameters; only comparable between fits of the same graph.
    pub log_likelihood: f64,
    pub converged: bool,
    pub em_steps: usize,
    pub restart_index: usize,
    pub assignment: Vec<usize>,
    pub prior: PriorReport,
    pub encoding: MetadataEncoding,
    pub theta: Vec<Vec<f64>>,
    pub nmi_vs_metadata: Option<f64>,
    pub per_restart: Vec<RestartSummary>,
}

impl FitReport {
    pub fn new(manifest: RunManifest, config: &FitConfig, result: &FitResult) -> Self {
        FitReport {
            manifest,
            config: config.clone(),
            k: config.k,
            log_likelihood: result.log_likelihood,
            converged: result.converged,
            em_steps: result.em_steps,
            restart_index: result.restart_index,
            assignment: result.assignment.clone(),
            prior: PriorReport::from(&result.prior),
            encoding: result.encoding.clone(),
            theta: result.theta.theta.rows().into_iter().map(|r| r.to_vec()).collect(),
            nmi_vs_metadata: result.nmi_vs_metadata,
            per_restart: result
                .restarts
                .iter()
                .map(|r| RestartSummary {
                    seed: r.seed,
                    ll: r.error.is_none().then_some(r.log_likelihood),
                    converged: r.converged,
                    steps: r.em_steps,
                    error: r.error.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String, ReportError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json<R: Read>(reader: R) -> Result<Self, ReportError> {
        Ok(serde_json::from_reader(reader)?)
    }

    pub fn theta(&self) -> Result<BlockAffinity, ReportError> {
        let k = self.theta.len();
        let flat: Vec<f64> = self.theta.iter().flatten().copied().collect();
        Array2::from_shape_vec((k, flat.len() / k.max(1)), flat)
            .ok()
            .and_then(BlockAffinity::new)
            .ok_or_else(|| ReportError::Shape("theta is not a positive symmetric matrix".into()))
    }
}

/// Writes node marginals as `node,community,probability` rows.
pub fn write_marginals_csv<W: Write>(marginals: &Marginals, writer: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["node", "community", "probability"])?;
    for (u, row) in marginals.node().rows().into_iter().enumerate() {
        for (s, q) in row.iter().enumerate() {
            w.write_record([u.to_string(), s.to_string(), q.to_string()])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes integer labels as `node,label` rows.
pub fn write_labels_csv<W: Write>(labels: &[usize], writer: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["node", "label"])?;
    for (u, l) in labels.iter().enumerate() {
        w.write_record([u.to_string(), l.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a `node,label` CSV covering nodes `0..n` exactly once each. If
/// every label is a non-negative integer it is kept as is; otherwise labels
/// are numbered in order of first appearance by node.
pub fn read_labels_csv<R: Read>(reader: R) -> Result<Vec<usize>, ReportError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ["node", "label"] {
        return Err(ReportError::Header(header));
    }
    let mut by_node: Vec<Option<String>> = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let node: usize = record[0].parse().map_err(|_| ReportError::Row {
            row,
            message: format!("cannot parse node id {:?}", &record[0]),
        })?;
        if node >= by_node.len() {
            by_node.resize(node + 1, None);
        }
        if by_node[node].replace(record[1].to_string()).is_some() {
            return Err(ReportError::Row {
                row,
                message: format!("node {node} listed more than once"),
            });
        }
    }
    let max = by_node.len();
    let by_node: Vec<String> = by_node
        .into_iter()
        .enumerate()
        .map(|(u, l)| l.ok_or(ReportError::Gap { max, missing: u }))
        .collect::<Result<_, _>>()?;
    if let Ok(numeric) = by_node.iter().map(|l| l.parse::<usize>()).collect::<Result<Vec<_>, _>>() {
        return Ok(numeric);
    }
    let mut index: HashMap<String, usize> = HashMap::new();
    Ok(by_node
        .into_iter()
        .map(|l| {
            let next = index.len();
            *index.entry(l).or_insert(next)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn prior_round_trip() {
        let discrete = Prior::Discrete(DiscretePrior::new(array![[0.9, 0.2, 0.5], [0.1, 0.8, 0.5]]).unwrap());
        let bern = Prior::Bernstein(BernsteinPrior::new(array![[1.0, 0.5], [0.0, 0.5]]).unwrap());
        for p in [discrete, bern] {
            let rep = PriorReport::from(&p);
            let json = serde_json::to_string(&rep).unwrap();
            let back: PriorReport = serde_json::from_str(&json).unwrap();
            assert_eq!(back.to_prior().unwrap(), p);
        }
    }

    #[test]
    fn prior_json_field_names() {
        let p = Prior::Discrete(DiscretePrior::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap());
        let v = serde_json::to_value(PriorReport::from(&p)).unwrap();
        assert_eq!(v["kind"], "discrete");
        assert_eq!(v["K"], 2);
        assert!(v.get("N").is_none());
        assert_eq!(v["gamma"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn inconsistent_prior_report_is_rejected() {
        let rep = PriorReport {
            kind: "discrete".into(),
            k: 2,
            categories: None,
            degree: Some(1),
            gamma: vec![0.5; 4],
        };
        assert!(rep.to_prior().is_err());
    }

    #[test]
    fn labels_round_trip() {
        let labels = vec![0, 2, 1, 1, 0];
        let mut buf = Vec::new();
        write_labels_csv(&labels, &mut buf).unwrap();
        assert_eq!(read_labels_csv(buf.as_slice()).unwrap(), labels);
    }

    #[test]
    fn labels_may_be_strings_in_any_row_order() {
        let text = "node,label\n2,b\n0,a\n1,b\n";
        assert_eq!(read_labels_csv(text.as_bytes()).unwrap(), vec![0, 1, 1]);
    }

    #[test]
    fn labels_reject_gaps_and_duplicates() {
        assert!(matches!(
            read_labels_csv("node,label\n0,a\n2,b\n".as_bytes()),
            Err(ReportError::Gap { missing: 1, .. })
        ));
        assert!(read_labels_csv("node,label\n0,a\n0,b\n".as_bytes()).is_err());
        assert!(read_labels_csv("id,label\n0,a\n".as_bytes()).is_err());
    }

    #[test]
    fn marginals_csv_rows() {
        let m = Marginals::new(array![[0.25, 0.75]], vec![]).unwrap();
        let mut buf = Vec::new();
        write_marginals_csv(&m, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "node,community,probability\n0,0,0.25\n0,1,0.75\n"
        );
    }
}
