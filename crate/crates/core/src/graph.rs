//! Immutable sparse undirected simple graphs in compressed sparse row form.
//!
//! Every undirected edge `{u, v}` is stored twice, once in each endpoint's
//! neighbor list. The slot of `v` inside `u`'s list doubles as the id of the
//! directed edge `u -> v`, which is how belief propagation addresses its
//! messages. `reverse[e]` gives the id of the opposite direction.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("line {line}: expected two non-negative integer node ids, found {content:?}")]
    Malformed { line: usize, content: String },
    #[error("line {line}: self-loop on node {node}")]
    SelfLoop { line: usize, node: usize },
    #[error("line {line}: duplicate edge {u}-{v} (first seen on line {first})")]
    DuplicateEdge {
        line: usize,
        first: usize,
        u: usize,
        v: usize,
    },
    #[error("edge {u}-{v} references a node outside 0..{n}")]
    NodeOutOfRange { u: usize, v: usize, n: usize },
    #[error("i/o error: {0}")]
    Io(String),
}

/// Sparse undirected graph without self-loops or multi-edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    reverse: Vec<usize>,
    /// Undirected edges as `(u, v)` with `u < v`, ordered by `(u, v)`.
    edges: Vec<(usize, usize)>,
    /// Directed slot of each undirected edge, oriented `u -> v` with `u < v`.
    edge_slots: Vec<usize>,
}

impl Graph {
    /// Builds a graph from an explicit edge list.
    ///
    /// Edges may be given in either orientation; self-loops and repeated
    /// pairs are rejected. Line numbers in errors are 1-based positions in
    /// `edges`.
    pub fn from_edges(node_count: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut seen: HashMap<(usize, usize), usize> = HashMap::with_capacity(edges.len());
        for (i, &(u, v)) in edges.iter().enumerate() {
            if u >= node_count || v >= node_count {
                return Err(GraphError::NodeOutOfRange { u, v, n: node_count });
            }
            if u == v {
                return Err(GraphError::SelfLoop { line: i + 1, node: u });
            }
            let key = (u.min(v), u.max(v));
            if let Some(&first) = seen.get(&key) {
                return Err(GraphError::DuplicateEdge {
                    line: i + 1,
                    first,
                    u,
                    v,
                });
            }
            seen.insert(key, i + 1);
        }
        Ok(Self::build(node_count, edges))
    }

    fn build(node_count: usize, edges: &[(usize, usize)]) -> Self {
        let mut degree = vec![0usize; node_count];
        for &(u, v) in edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = Vec::with_capacity(node_count + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..node_count].to_vec();
        let mut neighbors = vec![0usize; offsets[node_count]];
        for &(u, v) in edges {
            neighbors[cursor[u]] = v;
            cursor[u] += 1;
            neighbors[cursor[v]] = u;
            cursor[v] += 1;
        }
        for u in 0..node_count {
            neighbors[offsets[u]..offsets[u + 1]].sort_unstable();
        }

        let mut reverse = vec![0usize; neighbors.len()];
        let mut canonical = Vec::with_capacity(edges.len());
        let mut edge_slots = Vec::with_capacity(edges.len());
        for u in 0..node_count {
            for slot in offsets[u]..offsets[u + 1] {
                let v = neighbors[slot];
                if u < v {
                    let back = offsets[v]
                        + neighbors[offsets[v]..offsets[v + 1]]
                            .binary_search(&u)
                            .expect("adjacency is symmetric");
                    reverse[slot] = back;
                    reverse[back] = slot;
                    canonical.push((u, v));
                    edge_slots.push(slot);
                }
            }
        }

        Graph {
            offsets,
            neighbors,
            reverse,
            edges: canonical,
            edge_slots,
        }
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.node_count()).map(|u| self.degree(u)).collect()
    }

    /// Sorted neighbor list of `u`.
    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[self.offsets[u]..self.offsets[u + 1]]
    }

    /// Range of directed edge ids leaving `u`; slot `e` points at `target(e)`.
    pub fn slots(&self, u: usize) -> std::ops::Range<usize> {
        self.offsets[u]..self.offsets[u + 1]
    }

    pub fn target(&self, slot: usize) -> usize {
        self.neighbors[slot]
    }

    /// Id of the directed edge running opposite to `slot`.
    pub fn reverse(&self, slot: usize) -> usize {
        self.reverse[slot]
    }

    pub fn directed_edge_count(&self) -> usize {
        self.neighbors.len()
    }

    /// Undirected edges, each once as `(u, v)` with `u < v`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Directed slot `u -> v` of the `i`-th undirected edge `(u, v)`.
    pub fn edge_slot(&self, i: usize) -> usize {
        self.edge_slots[i]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.node_count() && self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Serializes to the edge-list text format accepted by [`load_edge_list`].
    pub fn to_edge_list(&self) -> String {
        let mut out = String::with_capacity(self.edges.len() * 12);
        for &(u, v) in &self.edges {
            let _ = writeln!(out, "{u} {v}");
        }
        out
    }
}

/// Parses a whitespace-separated edge list with 0-based node ids.
///
/// Blank lines and lines starting with `#` are skipped. The node count is
/// one more than the largest id mentioned, so unmentioned ids below it become
/// isolated nodes.
pub fn load_edge_list<R: BufRead>(reader: R) -> Result<Graph, GraphError> {
    let mut edges = Vec::new();
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    let mut max_id: Option<usize> = None;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| GraphError::Io(e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let malformed = || GraphError::Malformed {
            line: line_no,
            content: trimmed.to_string(),
        };
        let mut fields = trimmed.split_whitespace();
        let (u, v) = match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), None) => (
                a.parse::<usize>().map_err(|_| malformed())?,
                b.parse::<usize>().map_err(|_| malformed())?,
            ),
            _ => return Err(malformed()),
        };
        if u == v {
            return Err(GraphError::SelfLoop {
                line: line_no,
                node: u,
            });
        }
        let key = (u.min(v), u.max(v));
        if let Some(&first) = seen.get(&key) {
            return Err(GraphError::DuplicateEdge {
                line: line_no,
                first,
                u,
                v,
            });
        }
        seen.insert(key, line_no);
        max_id = Some(max_id.map_or(key.1, |m: usize| m.max(key.1)));
        edges.push((u, v));
    }

    let n = max_id.map_or(0, |m| m + 1);
    Ok(Graph::build(n, &edges))
}
