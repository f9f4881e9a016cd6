//! Graph-nested GRU ODE over temporal session graphs.
//!
//! The latent item states follow
//!
//! ```text
//! dH/dt = (1 - z) * (g - H)
//! r = sigmoid(Â X W_r + Â H U_r + b_r)
//! z = sigmoid(Â X W_z + Â H U_z + b_z)
//! g = tanh(Â X W_h + Â (r * H) U_h + b_h)
//! ```
//!
//! where `Â` is the graph-convolution operator of the edges that have appeared
//! by time `t` and `X` holds the raw embeddings of the graph's items.

pub mod align;
pub mod solver;

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

pub use align::{gcn_aggregate, normalized_adjacency, t_align, Adjacency, AlignedGraphView, TemporalGraph};
pub use solver::{integrate, step, FnSystem, OdeSystem, SolveStats, Solution, SolverConfig, SolverKind, StepOutcome};

use crate::error::Result;
use crate::numeric::{Array, ParamId, ParamStore, SparseMatrix, Tape, Var};
use crate::session::TemporalEdge;

/// Gate order used by every `[_; 3]` below.
pub const GATES: [&str; 3] = ["reset", "update", "candidate"];

/// Parameter handles of the ODE gates: input weights `W`, state weights `U`
/// (both `d x d`) and biases `b` (`d`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OdeParams {
    pub w: [ParamId; 3],
    pub u: [ParamId; 3],
    pub b: [ParamId; 3],
}

impl OdeParams {
    pub fn register(store: &mut ParamStore, d: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        let mut uniform = |shape: &[usize]| {
            let n = shape.iter().product();
            Array::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..bound)).collect()).expect("valid shape")
        };
        let w = GATES.map(|g| store.add(format!("ode.w_{g}"), uniform(&[d, d])));
        let u = GATES.map(|g| store.add(format!("ode.u_{g}"), uniform(&[d, d])));
        let b = GATES.map(|g| store.add(format!("ode.b_{g}"), uniform(&[d])));
        Self { w, u, b }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.w.iter().chain(&self.u).chain(&self.b).copied()
    }

    pub fn on_tape(&self, tape: &mut Tape, store: &ParamStore) -> GateVars {
        GateVars {
            w: self.w.map(|id| tape.param(store, id)),
            u: self.u.map(|id| tape.param(store, id)),
            b: self.b.map(|id| tape.param(store, id)),
        }
    }
}

/// Gate arrays held by value, for use outside a model.
#[derive(Clone, Debug, PartialEq)]
pub struct OdeWeights {
    pub w: [Array; 3],
    pub u: [Array; 3],
    pub b: [Array; 3],
}

impl OdeWeights {
    pub fn zeros(d: usize) -> Self {
        Self {
            w: std::array::from_fn(|_| Array::zeros(&[d, d])),
            u: std::array::from_fn(|_| Array::zeros(&[d, d])),
            b: std::array::from_fn(|_| Array::zeros(&[d])),
        }
    }

    /// Entries uniform in `[-scale, scale]`.
    pub fn random(d: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut fill = |a: &mut Array| a.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-scale..=scale));
        let mut out = Self::zeros(d);
        out.w.iter_mut().chain(out.u.iter_mut()).chain(out.b.iter_mut()).for_each(&mut fill);
        out
    }

    pub fn on_tape(&self, tape: &mut Tape) -> GateVars {
        GateVars {
            w: std::array::from_fn(|i| tape.constant(self.w[i].clone())),
            u: std::array::from_fn(|i| tape.constant(self.u[i].clone())),
            b: std::array::from_fn(|i| tape.constant(self.b[i].clone())),
        }
    }
}

/// Gate arrays as tape variables.
#[derive(Clone, Copy, Debug)]
pub struct GateVars {
    pub w: [Var; 3],
    pub u: [Var; 3],
    pub b: [Var; 3],
}

/// How the right-hand side sees the graph over time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphDynamics {
    /// Edges switch on at their timestamps; otherwise every edge is present throughout.
    pub t_alignment: bool,
    pub adjacency: Adjacency,
}

impl Default for GraphDynamics {
    fn default() -> Self {
        Self {
            t_alignment: true,
            adjacency: Adjacency::Symmetric,
        }
    }
}

/// Operator plus pre-aggregated input terms for one set of visible edges.
#[derive(Clone)]
struct Aligned {
    /// `None` stands for the identity (no visible edges).
    adjacency: Option<Arc<SparseMatrix>>,
    input_terms: [Var; 3],
}

/// The ODE right-hand side recorded on a tape.
pub struct GngOde<'t> {
    tape: &'t mut Tape,
    gates: GateVars,
    /// `X W` per gate, before graph aggregation.
    input_proj: [Var; 3],
    /// Sorted by time.
    edges: Vec<TemporalEdge>,
    num_nodes: usize,
    dynamics: GraphDynamics,
    cache: HashMap<usize, Aligned>,
    rhs_evals: usize,
}

impl<'t> GngOde<'t> {
    /// `x` holds one raw-embedding row per node of `graph`.
    pub fn new(
        tape: &'t mut Tape,
        graph: &impl TemporalGraph,
        gates: GateVars,
        x: Var,
        dynamics: GraphDynamics,
    ) -> Result<Self> {
        let input_proj = [
            tape.matmul(x, gates.w[0])?,
            tape.matmul(x, gates.w[1])?,
            tape.matmul(x, gates.w[2])?,
        ];
        let mut edges = graph.temporal_edges().to_vec();
        edges.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(Self {
            tape,
            gates,
            input_proj,
            edges,
            num_nodes: graph.num_nodes(),
            dynamics,
            cache: HashMap::new(),
            rhs_evals: 0,
        })
    }

    pub fn tape(&self) -> &Tape {
        self.tape
    }

    pub fn rhs_evals(&self) -> usize {
        self.rhs_evals
    }

    fn visible(&self, t: f64) -> usize {
        if self.dynamics.t_alignment {
            self.edges.partition_point(|e| e.time <= t)
        } else {
            self.edges.len()
        }
    }

    fn aligned(&mut self, visible: usize) -> Result<Aligned> {
        if let Some(a) = self.cache.get(&visible) {
            return Ok(a.clone());
        }
        let aligned = if visible == 0 {
            Aligned {
                adjacency: None,
                input_terms: self.input_proj,
            }
        } else {
            let m = Arc::new(normalized_adjacency(
                self.num_nodes,
                &self.edges[..visible],
                self.dynamics.adjacency,
            ));
            let mut input_terms = self.input_proj;
            for term in &mut input_terms {
                *term = self.tape.sparse_matmul(Arc::clone(&m), *term)?;
            }
            Aligned {
                adjacency: Some(m),
                input_terms,
            }
        };
        self.cache.insert(visible, aligned.clone());
        Ok(aligned)
    }

    fn aggregate(&mut self, adjacency: &Option<Arc<SparseMatrix>>, v: Var) -> Result<Var> {
        match adjacency {
            Some(m) => self.tape.sparse_matmul(Arc::clone(m), v),
            None => Ok(v),
        }
    }

    fn gate(&mut self, aligned: &Aligned, i: usize, state: Var) -> Result<Var> {
        let hu = self.tape.matmul(state, self.gates.u[i])?;
        let agg = self.aggregate(&aligned.adjacency, hu)?;
        let pre = self.tape.add(agg, aligned.input_terms[i])?;
        self.tape.add_row(pre, self.gates.b[i])
    }

    /// `dH/dt` with the edges visible at `graph_time`.
    pub fn eval(&mut self, graph_time: f64, h: Var) -> Result<Var> {
        self.rhs_evals += 1;
        let aligned = self.aligned(self.visible(graph_time))?;
        let r_pre = self.gate(&aligned, 0, h)?;
        let r = self.tape.sigmoid(r_pre);
        let z_pre = self.gate(&aligned, 1, h)?;
        let z = self.tape.sigmoid(z_pre);
        let rh = self.tape.mul(r, h)?;
        let g_pre = self.gate(&aligned, 2, rh)?;
        let g = self.tape.tanh(g_pre);
        let keep = self.tape.affine(z, -1.0, 1.0);
        let diff = self.tape.sub(g, h)?;
        self.tape.mul(keep, diff)
    }
}

impl OdeSystem for GngOde<'_> {
    type State = Var;

    fn rhs(&mut self, t: f64, y: &Var) -> Result<Var> {
        self.eval(t, *y)
    }

    fn rhs_frozen(&mut self, _t: f64, frozen_at: f64, y: &Var) -> Result<Var> {
        self.eval(frozen_at, *y)
    }

    fn lincomb(&mut self, terms: &[(f64, &Var)]) -> Result<Var> {
        let terms: Vec<(f64, Var)> = terms.iter().map(|&(c, v)| (c, *v)).collect();
        self.tape.lincomb(&terms)
    }

    fn values<'a>(&'a self, y: &'a Var) -> &'a [f64] {
        self.tape.value(*y).data()
    }

    fn breakpoints(&self) -> Vec<f64> {
        if !self.dynamics.t_alignment {
            return Vec::new();
        }
        let mut times: Vec<f64> = self.edges.iter().map(|e| e.time).collect();
        times.dedup();
        times
    }
}

/// Integrates the latent states from 0 to 1 on `tape`.
pub fn solve(
    tape: &mut Tape,
    h0: Var,
    graph: &impl TemporalGraph,
    gates: GateVars,
    x: Var,
    cfg: &SolverConfig,
    dynamics: GraphDynamics,
) -> Result<Solution<Var>> {
    let mut sys = GngOde::new(tape, graph, gates, x, dynamics)?;
    integrate(&mut sys, &h0, 0.0, 1.0, cfg)
}

/// `dH/dt` at `(t, h)` for plain arrays.
pub fn ode_rhs(
    h: &Array,
    t: f64,
    graph: &impl TemporalGraph,
    weights: &OdeWeights,
    x: &Array,
    dynamics: GraphDynamics,
) -> Result<Array> {
    let mut tape = Tape::new();
    let gates = weights.on_tape(&mut tape);
    let xv = tape.constant(x.clone());
    let hv = tape.constant(h.clone());
    let mut sys = GngOde::new(&mut tape, graph, gates, xv, dynamics)?;
    let out = sys.eval(t, hv)?;
    Ok(tape.value(out).clone())
}

/// [`solve`] for plain arrays; returns the state at `t = 1`.
pub fn solve_values(
    h0: &Array,
    graph: &impl TemporalGraph,
    weights: &OdeWeights,
    x: &Array,
    cfg: &SolverConfig,
    dynamics: GraphDynamics,
) -> Result<Array> {
    solve_span(h0, graph, weights, x, cfg, dynamics, 0.0, 1.0)
}

/// Plain-array integration over an arbitrary span `[t0, t1]`.
#[allow(clippy::too_many_arguments)]
pub fn solve_span(
    h0: &Array,
    graph: &impl TemporalGraph,
    weights: &OdeWeights,
    x: &Array,
    cfg: &SolverConfig,
    dynamics: GraphDynamics,
    t0: f64,
    t1: f64,
) -> Result<Array> {
    let mut tape = Tape::new();
    let gates = weights.on_tape(&mut tape);
    let xv = tape.constant(x.clone());
    let hv = tape.constant(h0.clone());
    let mut sys = GngOde::new(&mut tape, graph, gates, xv, dynamics)?;
    let out = integrate(&mut sys, &hv, t0, t1, cfg)?;
    Ok(tape.value(out.state).clone())
}
