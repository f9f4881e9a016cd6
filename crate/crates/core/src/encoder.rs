//! Initial latent states from raw item embeddings and the static session graph.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Array, ParamId, ParamStore, SparseMatrix, Tape, Var};
use crate::ode::GATES;
use crate::session::StaticSessionGraph;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Gated graph network: neighbourhood aggregation followed by a GRU cell.
    #[default]
    Ggnn,
    /// Two dense layers per item, ignoring the graph.
    Mlp,
    /// Raw embeddings.
    Identity,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ggnn" => Ok(EncoderKind::Ggnn),
            "mlp" => Ok(EncoderKind::Mlp),
            "identity" => Ok(EncoderKind::Identity),
            other => Err(Error::Config(format!("unknown encoder {other:?} (ggnn, mlp, identity)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// GGNN layers; the GRU weights are shared across layers. Zero behaves like `Identity`.
    pub layers: usize,
    /// Aggregate over incoming and outgoing edges (concatenated) rather than incoming only.
    pub bidirectional: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Ggnn,
            layers: 1,
            bidirectional: true,
        }
    }
}

/// GRU cell `h' = z * h + (1 - z) * g` over an input of width `input_width`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruParams {
    pub w: [ParamId; 3],
    pub u: [ParamId; 3],
    pub b: [ParamId; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderParams {
    Identity,
    Ggnn {
        gru: GruParams,
        layers: usize,
        bidirectional: bool,
    },
    Mlp(MlpParams),
}

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Array {
    let n = shape.iter().product();
    Array::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..bound)).collect()).expect("valid shape")
}

impl EncoderParams {
    pub fn register(store: &mut ParamStore, d: usize, cfg: &EncoderConfig, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        match cfg.kind {
            EncoderKind::Identity => EncoderParams::Identity,
            EncoderKind::Ggnn if cfg.layers == 0 => EncoderParams::Identity,
            EncoderKind::Ggnn => {
                let input = if cfg.bidirectional { 2 * d } else { d };
                let w = GATES.map(|g| store.add(format!("encoder.w_{g}"), uniform(rng, &[input, d], bound)));
                let u = GATES.map(|g| store.add(format!("encoder.u_{g}"), uniform(rng, &[d, d], bound)));
                let b = GATES.map(|g| store.add(format!("encoder.b_{g}"), uniform(rng, &[d], bound)));
                EncoderParams::Ggnn {
                    gru: GruParams { w, u, b },
                    layers: cfg.layers,
                    bidirectional: cfg.bidirectional,
                }
            }
            EncoderKind::Mlp => EncoderParams::Mlp(MlpParams {
                w1: store.add("encoder.mlp_w1", uniform(rng, &[d, d], bound)),
                b1: store.add("encoder.mlp_b1", uniform(rng, &[d], bound)),
                w2: store.add("encoder.mlp_w2", uniform(rng, &[d, d], bound)),
                b2: store.add("encoder.mlp_b2", uniform(rng, &[d], bound)),
            }),
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        match self {
            EncoderParams::Identity => Vec::new(),
            EncoderParams::Ggnn { gru, .. } => gru.w.iter().chain(&gru.u).chain(&gru.b).copied().collect(),
            EncoderParams::Mlp(m) => vec![m.w1, m.b1, m.w2, m.b2],
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w: [Var; 3],
    pub u: [Var; 3],
    pub b: [Var; 3],
}

impl GruParams {
    pub fn on_tape(&self, tape: &mut Tape, store: &ParamStore) -> GruVars {
        GruVars {
            w: self.w.map(|id| tape.param(store, id)),
            u: self.u.map(|id| tape.param(store, id)),
            b: self.b.map(|id| tape.param(store, id)),
        }
    }
}

/// One GRU update of the rows of `h` driven by the rows of `input`.
pub fn gru_cell(tape: &mut Tape, input: Var, h: Var, p: &GruVars) -> Result<Var> {
    let gate = |tape: &mut Tape, i: usize, state: Var| -> Result<Var> {
        let xi = tape.matmul(input, p.w[i])?;
        let hu = tape.matmul(state, p.u[i])?;
        let s = tape.add(xi, hu)?;
        tape.add_row(s, p.b[i])
    };
    let r_pre = gate(tape, 0, h)?;
    let r = tape.sigmoid(r_pre);
    let z_pre = gate(tape, 1, h)?;
    let z = tape.sigmoid(z_pre);
    let rh = tape.mul(r, h)?;
    let g_pre = gate(tape, 2, rh)?;
    let g = tape.tanh(g_pre);
    // z * h + (1 - z) * g == g + z * (h - g)
    let diff = tape.sub(h, g)?;
    let gated = tape.mul(z, diff)?;
    tape.add(g, gated)
}

/// Neighbourhood aggregation with transition weights followed by the GRU cell.
pub fn ggnn_layer(tape: &mut Tape, h: Var, graph: &StaticSessionGraph, p: &GruVars, bidirectional: bool) -> Result<Var> {
    let ops = Operators::new(graph, bidirectional);
    ops.layer(tape, h, p)
}

struct Operators {
    incoming: Arc<SparseMatrix>,
    outgoing: Option<Arc<SparseMatrix>>,
}

impl Operators {
    fn new(graph: &StaticSessionGraph, bidirectional: bool) -> Self {
        Self {
            incoming: Arc::new(graph.incoming.clone()),
            outgoing: bidirectional.then(|| Arc::new(graph.outgoing.clone())),
        }
    }

    fn layer(&self, tape: &mut Tape, h: Var, p: &GruVars) -> Result<Var> {
        let incoming = tape.sparse_matmul(Arc::clone(&self.incoming), h)?;
        let neighbourhood = match &self.outgoing {
            Some(out) => {
                let outgoing = tape.sparse_matmul(Arc::clone(out), h)?;
                tape.concat(incoming, outgoing)?
            }
            None => incoming,
        };
        gru_cell(tape, neighbourhood, h, p)
    }
}

/// Encoder output for the nodes of `graph`, row-normalized so every entry lies in `[-1, 1]`.
///
/// `x` holds the raw embedding of each node's item.
pub fn encode_initial(tape: &mut Tape, store: &ParamStore, graph: &StaticSessionGraph, x: Var, p: &EncoderParams) -> Result<Var> {
    let h = match p {
        EncoderParams::Identity => x,
        EncoderParams::Ggnn {
            gru,
            layers,
            bidirectional,
        } => {
            let vars = gru.on_tape(tape, store);
            let ops = Operators::new(graph, *bidirectional);
            let mut h = x;
            for _ in 0..*layers {
                h = ops.layer(tape, h, &vars)?;
            }
            h
        }
        EncoderParams::Mlp(m) => {
            let (w1, b1, w2, b2) = (
                tape.param(store, m.w1),
                tape.param(store, m.b1),
                tape.param(store, m.w2),
                tape.param(store, m.b2),
            );
            let a = tape.matmul(x, w1)?;
            let a = tape.add_row(a, b1)?;
            let a = tape.tanh(a);
            let a = tape.matmul(a, w2)?;
            tape.add_row(a, b2)?
        }
    };
    Ok(tape.l2_normalize_rows(h))
}
