//! Per-node metadata columns: discrete categories or ordered scalars.
//!
//! Categories are 0-based internally. A node without a discrete value is
//! given the reserved category [`MISSING_LABEL`], which is treated like any
//! other value. Ordered values are min-max rescaled into `[0, 1]`; missing
//! ordered values stay flagged and are handled by the prior model.

use std::collections::HashMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MISSING_LABEL: &str = "missing";

#[derive(Debug, Error)]
pub enum MetadataError {
    #[error("metadata CSV: {0}")]
    Csv(String),
    #[error("metadata CSV must have header `node,value`, found {0:?}")]
    Header(Vec<String>),
    #[error("row {row}: cannot parse node id {value:?}")]
    BadNode { row: usize, value: String },
    #[error("row {row}: node {node} is outside 0..{n}")]
    NodeOutOfRange { row: usize, node: usize, n: usize },
    #[error("row {row}: node {node} listed more than once")]
    DuplicateNode { row: usize, node: usize },
    #[error("node {node}: cannot parse ordered value {value:?} as a real number")]
    BadReal { node: usize, value: String },
    #[error("category index {index} out of range for {categories} categories")]
    CategoryOutOfRange { index: usize, categories: usize },
    #[error("metadata has {metadata} entries but the graph has {graph} nodes")]
    LengthMismatch { metadata: usize, graph: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetadataKind {
    Discrete,
    Ordered,
}

/// Min-max transform taking raw ordered values into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescale {
    pub min: f64,
    pub max: f64,
}

impl Rescale {
    /// Maps a raw value into `[0, 1]`, clamping values outside the fitted
    /// range. A degenerate range (all training values equal) maps to 0.5.
    pub fn apply(&self, raw: f64) -> f64 {
        if self.max > self.min {
            ((raw - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        } else {
            0.5
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMetadata {
    values: Vec<usize>,
    labels: Vec<String>,
}

impl DiscreteMetadata {
    /// Builds a column from 0-based category indices and their labels.
    pub fn new(values: Vec<usize>, labels: Vec<String>) -> Result<Self, MetadataError> {
        if let Some(&bad) = values.iter().find(|&&x| x >= labels.len()) {
            return Err(MetadataError::CategoryOutOfRange {
                index: bad,
                categories: labels.len(),
            });
        }
        Ok(DiscreteMetadata { values, labels })
    }

    /// Column with categories labelled `"0"`, `"1"`, ... `categories - 1`.
    pub fn from_indices(values: Vec<usize>, categories: usize) -> Result<Self, MetadataError> {
        let labels = (0..categories).map(|c| c.to_string()).collect();
        Self::new(values, labels)
    }

    /// Every node in a single category; fitting against this is the
    /// no-metadata limit of the model.
    pub fn constant(node_count: usize) -> Self {
        DiscreteMetadata {
            values: vec![0; node_count],
            labels: vec!["all".to_string()],
        }
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn category_count(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn category_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderedMetadata {
    raw: Vec<Option<f64>>,
    scaled: Vec<Option<f64>>,
    rescale: Rescale,
}

impl OrderedMetadata {
    pub fn new(raw: Vec<Option<f64>>) -> Self {
        let present = raw.iter().flatten().copied();
        let (min, max) = present.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(x), hi.max(x))
        });
        let rescale = if min.is_finite() {
            Rescale { min, max }
        } else {
            Rescale { min: 0.0, max: 0.0 }
        };
        let scaled = raw.iter().map(|x| x.map(|x| rescale.apply(x))).collect();
        OrderedMetadata {
            raw,
            scaled,
            rescale,
        }
    }

    /// Column of values already in `[0, 1]`, with an identity transform.
    pub fn from_unit(values: Vec<Option<f64>>) -> Self {
        let rescale = Rescale { min: 0.0, max: 1.0 };
        let scaled = values.iter().map(|x| x.map(|x| x.clamp(0.0, 1.0))).collect();
        OrderedMetadata {
            raw: values,
            scaled,
            rescale,
        }
    }

    pub fn raw(&self) -> &[Option<f64>] {
        &self.raw
    }

    /// Rescaled values in `[0, 1]`; `None` marks a missing value.
    pub fn scaled(&self) -> &[Option<f64>] {
        &self.scaled
    }

    pub fn rescale(&self) -> Rescale {
        self.rescale
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

/// Category labels or rescale transform of the column a model was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MetadataEncoding {
    Discrete { labels: Vec<String> },
    Ordered { rescale: Rescale },
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetadataColumn {
    Discrete(DiscreteMetadata),
    Ordered(OrderedMetadata),
}

impl MetadataColumn {
    pub fn kind(&self) -> MetadataKind {
        match self {
            MetadataColumn::Discrete(_) => MetadataKind::Discrete,
            MetadataColumn::Ordered(_) => MetadataKind::Ordered,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            MetadataColumn::Discrete(d) => d.len(),
            MetadataColumn::Ordered(o) => o.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// What a fitted model needs to map new raw values onto prior inputs.
    pub fn encoding(&self) -> MetadataEncoding {
        match self {
            MetadataColumn::Discrete(d) => MetadataEncoding::Discrete {
                labels: d.labels.clone(),
            },
            MetadataColumn::Ordered(o) => MetadataEncoding::Ordered { rescale: o.rescale },
        }
    }

    pub fn check_len(&self, node_count: usize) -> Result<(), MetadataError> {
        if self.len() == node_count {
            Ok(())
        } else {
            Err(MetadataError::LengthMismatch {
                metadata: self.len(),
                graph: node_count,
            })
        }
    }
}

/// Reads `node,value` rows into a per-node vector of optional strings.
///
/// Empty value fields count as absent.
fn read_rows<R: Read>(reader: R, node_count: usize) -> Result<Vec<Option<String>>, MetadataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| MetadataError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    if header.len() != 2 || header[0] != "node" || header[1] != "value" {
        return Err(MetadataError::Header(header));
    }

    let mut out: Vec<Option<String>> = vec![None; node_count];
    let mut listed = vec![false; node_count];
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| MetadataError::Csv(e.to_string()))?;
        let node_field = &record[0];
        let node: usize = node_field.parse().map_err(|_| MetadataError::BadNode {
            row,
            value: node_field.to_string(),
        })?;
        if node >= node_count {
            return Err(MetadataError::NodeOutOfRange {
                row,
                node,
                n: node_count,
            });
        }
        if listed[node] {
            return Err(MetadataError::DuplicateNode { row, node });
        }
        listed[node] = true;
        let value = &record[1];
        if !value.is_empty() {
            out[node] = Some(value.to_string());
        }
    }
    Ok(out)
}

/// Loads a `node,value` CSV for a graph with `node_count` nodes.
///
/// Discrete labels become categories in order of first appearance; nodes
/// without a value share a trailing `"missing"` category (a literal
/// `missing` label is the same category). Ordered values are parsed as
/// reals and min-max rescaled.
pub fn load_metadata<R: Read>(
    reader: R,
    kind: MetadataKind,
    node_count: usize,
) -> Result<MetadataColumn, MetadataError> {
    let rows = read_rows(reader, node_count)?;
    match kind {
        MetadataKind::Discrete => {
            let mut labels: Vec<String> = Vec::new();
            let mut index: HashMap<String, usize> = HashMap::new();
            let mut values = Vec::with_capacity(node_count);
            let mut any_missing = false;
            for value in &rows {
                match value.as_deref() {
                    Some(label) if label != MISSING_LABEL => {
                        let next = labels.len();
                        let c = *index.entry(label.to_string()).or_insert_with(|| {
                            labels.push(label.to_string());
                            next
                        });
                        values.push(Some(c));
                    }
                    _ => {
                        any_missing = true;
                        values.push(None);
                    }
                }
            }
            let missing = labels.len();
            if any_missing {
                labels.push(MISSING_LABEL.to_string());
            }
            let values = values.into_iter().map(|v| v.unwrap_or(missing)).collect();
            Ok(MetadataColumn::Discrete(DiscreteMetadata::new(values, labels)?))
        }
        MetadataKind::Ordered => {
            let mut raw = Vec::with_capacity(node_count);
            for (node, value) in rows.iter().enumerate() {
                raw.push(match value {
                    None => None,
                    Some(s) => Some(s.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| {
                        MetadataError::BadReal {
                            node,
                            value: s.clone(),
                        }
                    })?),
                });
            }
            Ok(MetadataColumn::Ordered(OrderedMetadata::new(raw)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn discrete(text: &str, n: usize) -> DiscreteMetadata {
        match load_metadata(text.as_bytes(), MetadataKind::Discrete, n).unwrap() {
            MetadataColumn::Discrete(d) => d,
            _ => unreachable!(),
        }
    }

    #[test]
    fn discrete_first_appearance_order() {
        let d = discrete("node,value\n0,a\n1,b\n2,a\n", 3);
        assert_eq!(d.category_count(), 2);
        assert_eq!(d.values(), &[0, 1, 0]);
        assert_eq!(d.labels(), &["a", "b"]);
    }

    #[test]
    fn discrete_missing_category() {
        let d = discrete("node,value\n0,a\n2,a\n", 3);
        assert_eq!(d.category_count(), 2);
        assert_eq!(d.values(), &[0, 1, 0]);
        assert_eq!(d.labels()[1], MISSING_LABEL);

        let d = discrete("node,value\n0,a\n1,\n2,b\n", 3);
        assert_eq!(d.values(), &[0, 2, 1]);
        assert_eq!(d.labels(), &["a", "b", "missing"]);
    }

    #[test]
    fn ordered_rescaled() {
        let col = load_metadata("node,value\n0,1.0\n1,3.0\n2,2.0\n".as_bytes(), MetadataKind::Ordered, 3)
            .unwrap();
        let MetadataColumn::Ordered(o) = col else { unreachable!() };
        assert_eq!(o.scaled(), &[Some(0.0), Some(1.0), Some(0.5)]);
        assert_eq!(o.rescale(), Rescale { min: 1.0, max: 3.0 });
    }

    #[test]
    fn ordered_constant_maps_to_half() {
        let o = OrderedMetadata::new(vec![Some(2.0), Some(2.0), None]);
        assert_eq!(o.scaled(), &[Some(0.5), Some(0.5), None]);
    }

    #[test]
    fn ordered_missing_and_errors() {
        let col = load_metadata("node,value\n0,1\n2,5\n".as_bytes(), MetadataKind::Ordered, 3).unwrap();
        let MetadataColumn::Ordered(o) = col else { unreachable!() };
        assert_eq!(o.scaled()[1], None);

        let err = load_metadata("node,value\n0,abc\n".as_bytes(), MetadataKind::Ordered, 1).unwrap_err();
        assert!(matches!(err, MetadataError::BadReal { .. }));
    }

    #[test]
    fn row_errors() {
        let err = load_metadata("node,value\n3,a\n".as_bytes(), MetadataKind::Discrete, 3).unwrap_err();
        assert!(matches!(err, MetadataError::NodeOutOfRange { row: 2, node: 3, .. }));
        let err = load_metadata("node,value\n0,a\n0,b\n".as_bytes(), MetadataKind::Discrete, 3).unwrap_err();
        assert!(matches!(err, MetadataError::DuplicateNode { row: 3, node: 0 }));
        let err = load_metadata("id,label\n0,a\n".as_bytes(), MetadataKind::Discrete, 3).unwrap_err();
        assert!(matches!(err, MetadataError::Header(_)));
    }

    #[test]
    fn rescale_clamps() {
        let r = Rescale { min: 10.0, max: 20.0 };
        assert_eq!(r.apply(5.0), 0.0);
        assert_eq!(r.apply(25.0), 1.0);
        assert_eq!(r.apply(15.0), 0.5);
    }

    #[test]
    fn category_out_of_range() {
        assert!(DiscreteMetadata::from_indices(vec![0, 2], 2).is_err());
    }
}
