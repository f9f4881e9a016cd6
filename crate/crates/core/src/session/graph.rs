use std::collections::BTreeMap;

use crate::numeric::SparseMatrix;
use crate::session::Session;

/// A transition `source -> target` between node indices, stamped with the
/// normalized time at which it appeared.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemporalEdge {
    pub source: usize,
    pub target: usize,
    pub time: f64,
}

/// Distinct items of a session prefix with timestamped transition edges.
///
/// The prefix timeline is mapped affinely onto `[0, 1]`: the first click sits
/// at 0 and the last at 1. Each edge carries the time of its later click.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalSessionGraph {
    /// Item index of every node, in order of first appearance.
    pub items: Vec<usize>,
    /// One edge per consecutive click pair, in click order.
    pub edges: Vec<TemporalEdge>,
    /// Node holding the last clicked item.
    pub last: usize,
    /// Raw duration of the prefix in seconds.
    pub duration: f64,
}

/// Maps clicks to node indices (first-appearance order).
fn node_indices(session: &Session) -> (Vec<usize>, Vec<usize>) {
    let mut items = Vec::new();
    let mut lookup = BTreeMap::new();
    let nodes = session
        .clicks
        .iter()
        .map(|c| {
            *lookup.entry(c.item).or_insert_with(|| {
                items.push(c.item);
                items.len() - 1
            })
        })
        .collect();
    (items, nodes)
}

impl TemporalSessionGraph {
    pub fn build(prefix: &Session) -> Self {
        assert!(!prefix.is_empty(), "temporal graph needs at least one click");
        let (items, nodes) = node_indices(prefix);
        let n = prefix.len();
        let first = prefix.clicks[0].time;
        let duration = prefix.clicks[n - 1].time - first;
        let edges = (1..n)
            .map(|i| {
                let time = if duration > 0.0 {
                    ((prefix.clicks[i].time - first) / duration).clamp(0.0, 1.0)
                } else {
                    // All clicks share one timestamp: fall back to ordinal positions.
                    i as f64 / (n - 1) as f64
                };
                TemporalEdge {
                    source: nodes[i - 1],
                    target: nodes[i],
                    time,
                }
            })
            .collect();
        Self {
            items,
            edges,
            last: nodes[n - 1],
            duration,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.items.len()
    }
}

/// Session graph without time, with transition-frequency edge weights.
///
/// `outgoing` has an entry `(u, v, w)` with `w = count(u->v) / out-transitions(u)`;
/// `incoming` has `(v, u, w)` with `w = count(u->v) / in-transitions(v)`. Both
/// are laid out so that multiplying them with a state matrix aggregates
/// neighbour rows into the row of the node being updated.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticSessionGraph {
    pub items: Vec<usize>,
    pub incoming: SparseMatrix,
    pub outgoing: SparseMatrix,
}

impl StaticSessionGraph {
    pub fn build(prefix: &Session) -> Self {
        assert!(!prefix.is_empty(), "static graph needs at least one click");
        let (items, nodes) = node_indices(prefix);
        let n = items.len();
        let mut counts: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut out_deg = vec![0.0; n];
        let mut in_deg = vec![0.0; n];
        for w in nodes.windows(2) {
            *counts.entry((w[0], w[1])).or_default() += 1.0;
            out_deg[w[0]] += 1.0;
            in_deg[w[1]] += 1.0;
        }
        let mut incoming = SparseMatrix::new(n, n);
        let mut outgoing = SparseMatrix::new(n, n);
        for (&(u, v), &c) in &counts {
            outgoing.push(u, v, c / out_deg[u]);
            incoming.push(v, u, c / in_deg[v]);
        }
        Self {
            items,
            incoming,
            outgoing,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.items.len()
    }

    /// Outgoing weight of `u -> v`, zero when absent.
    pub fn out_weight(&self, u: usize, v: usize) -> f64 {
        self.outgoing
            .entries()
            .iter()
            .filter(|&&(r, c, _)| r == u && c == v)
            .map(|e| e.2)
            .sum()
    }

    /// Block-diagonal union; node `i` of graph `g` lands at `offset[g] + i`.
    pub fn disjoint_union(graphs: &[StaticSessionGraph]) -> Self {
        let n: usize = graphs.iter().map(|g| g.num_nodes()).sum();
        let mut items = Vec::with_capacity(n);
        let mut incoming = Vec::new();
        let mut outgoing = Vec::new();
        for g in graphs {
            let off = items.len();
            items.extend_from_slice(&g.items);
            incoming.extend(g.incoming.entries().iter().map(|&(r, c, w)| (r + off, c + off, w)));
            outgoing.extend(g.outgoing.entries().iter().map(|&(r, c, w)| (r + off, c + off, w)));
        }
        Self {
            items,
            incoming: SparseMatrix::from_entries(n, n, incoming),
            outgoing: SparseMatrix::from_entries(n, n, outgoing),
        }
    }
}

/// Disjoint union of temporal graphs sharing the integration interval `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchGraph {
    /// First union node of each session.
    pub offsets: Vec<usize>,
    /// Item index of every union node.
    pub items: Vec<usize>,
    /// Session owning every union node.
    pub node_session: Vec<usize>,
    /// All edges, in union node indices.
    pub edges: Vec<TemporalEdge>,
    /// Union index of each session's last-clicked node.
    pub last: Vec<usize>,
}

impl BatchGraph {
    pub fn num_nodes(&self) -> usize {
        self.items.len()
    }

    pub fn num_sessions(&self) -> usize {
        self.offsets.len()
    }

    /// Node range of session `s`.
    pub fn session_nodes(&self, s: usize) -> std::ops::Range<usize> {
        let end = self.offsets.get(s + 1).copied().unwrap_or(self.items.len());
        self.offsets[s]..end
    }
}

/// Because every session timeline is already normalized to `[0, 1]`, the
/// union shares one integration grid and needs no time shifting.
pub fn make_batch(graphs: &[TemporalSessionGraph]) -> BatchGraph {
    assert!(!graphs.is_empty(), "batch needs at least one graph");
    let mut batch = BatchGraph {
        offsets: Vec::with_capacity(graphs.len()),
        items: Vec::new(),
        node_session: Vec::new(),
        edges: Vec::new(),
        last: Vec::with_capacity(graphs.len()),
    };
    for (s, g) in graphs.iter().enumerate() {
        let off = batch.items.len();
        batch.offsets.push(off);
        batch.items.extend_from_slice(&g.items);
        batch.node_session.extend(std::iter::repeat_n(s, g.num_nodes()));
        batch.edges.extend(g.edges.iter().map(|e| TemporalEdge {
            source: e.source + off,
            target: e.target + off,
            time: e.time,
        }));
        batch.last.push(g.last + off);
    }
    batch
}

impl From<&TemporalSessionGraph> for BatchGraph {
    fn from(g: &TemporalSessionGraph) -> Self {
        make_batch(std::slice::from_ref(g))
    }
}
