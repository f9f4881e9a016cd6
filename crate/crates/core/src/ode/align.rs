//! Time-filtered views of temporal graphs and their graph-convolution operators.

use std::collections::BTreeSet;

use crate::numeric::{Array, SparseMatrix};
use crate::session::{BatchGraph, TemporalEdge, TemporalSessionGraph};

/// Anything exposing nodes and timestamped edges.
pub trait TemporalGraph {
    fn num_nodes(&self) -> usize;
    fn temporal_edges(&self) -> &[TemporalEdge];
}

impl TemporalGraph for TemporalSessionGraph {
    fn num_nodes(&self) -> usize {
        self.items.len()
    }
    fn temporal_edges(&self) -> &[TemporalEdge] {
        &self.edges
    }
}

impl TemporalGraph for BatchGraph {
    fn num_nodes(&self) -> usize {
        self.items.len()
    }
    fn temporal_edges(&self) -> &[TemporalEdge] {
        &self.edges
    }
}

/// All nodes of a graph together with the edges that have appeared by `time`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedGraphView {
    pub num_nodes: usize,
    pub time: f64,
    pub edges: Vec<TemporalEdge>,
}

/// Keeps exactly the edges with timestamp `<= t`.
pub fn t_align(graph: &impl TemporalGraph, t: f64) -> AlignedGraphView {
    AlignedGraphView {
        num_nodes: graph.num_nodes(),
        time: t,
        edges: graph.temporal_edges().iter().filter(|e| e.time <= t).copied().collect(),
    }
}

/// How edges enter the graph-convolution operator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adjacency {
    /// `D^-1/2 (A + A^T + I) D^-1/2` with binary `A`.
    #[default]
    Symmetric,
    /// `D^-1 (A^T + I)`: each node averages itself and its in-neighbours.
    Directed,
}

impl std::str::FromStr for Adjacency {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "symmetric" => Ok(Adjacency::Symmetric),
            "directed" => Ok(Adjacency::Directed),
            other => Err(crate::Error::Config(format!("unknown adjacency {other:?} (symmetric, directed)"))),
        }
    }
}

/// Graph-convolution operator over `edges` on `num_nodes` nodes.
pub fn normalized_adjacency(num_nodes: usize, edges: &[TemporalEdge], mode: Adjacency) -> SparseMatrix {
    let pairs: BTreeSet<(usize, usize)> = edges.iter().map(|e| (e.source, e.target)).collect();
    let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * pairs.len() + num_nodes);
    for &(u, v) in &pairs {
        match mode {
            Adjacency::Symmetric => {
                entries.push((u, v, 1.0));
                entries.push((v, u, 1.0));
            }
            Adjacency::Directed => entries.push((v, u, 1.0)),
        }
    }
    entries.extend((0..num_nodes).map(|i| (i, i, 1.0)));

    let mut degree = vec![0.0; num_nodes];
    for &(r, _, w) in &entries {
        degree[r] += w;
    }
    for (r, c, w) in &mut entries {
        *w /= match mode {
            Adjacency::Symmetric => (degree[*r] * degree[*c]).sqrt(),
            Adjacency::Directed => degree[*r],
        };
    }
    SparseMatrix::from_entries(num_nodes, num_nodes, entries)
}

/// `Â . m . w` on the view's edges.
pub fn gcn_aggregate(m: &Array, view: &AlignedGraphView, w: &Array, mode: Adjacency) -> Array {
    let a = normalized_adjacency(view.num_nodes, &view.edges, mode);
    let mw = crate::numeric::array::gemm(m, w, false);
    a.apply(&mw)
}
