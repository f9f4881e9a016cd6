//! The full network: item embeddings, initial-state encoder, graph ODE and readout.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{encode_initial, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::numeric::{Array, ParamId, ParamStore, Tape, Var};
use crate::ode::{solve, GraphDynamics, OdeParams, SolverConfig};
use crate::readout::{self, ReadoutParams};
use crate::session::{make_batch, Session, StaticSessionGraph, TemporalSessionGraph};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub encoder: EncoderConfig,
    pub solver: SolverConfig,
    pub dynamics: GraphDynamics,
    /// Softmax scale applied to the cosine logits.
    pub scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            encoder: EncoderConfig::default(),
            solver: SolverConfig::default(),
            dynamics: GraphDynamics::default(),
            scale: 12.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelParams {
    pub embedding: ParamId,
    pub encoder: EncoderParams,
    pub ode: OdeParams,
    pub readout: ReadoutParams,
}

/// Parameters plus the configuration needed to run them.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub num_items: usize,
    pub store: ParamStore,
    pub params: ModelParams,
}

/// Tape variables of one forward pass over a batch of prefixes.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// `softmax(scale * cosine)`, one row per prefix.
    pub probs: Var,
    pub logits: Var,
}

impl Model {
    /// Fresh parameters drawn uniformly from `±1/sqrt(dim)` with a seeded generator.
    pub fn new(config: ModelConfig, num_items: usize, seed: u64) -> Result<Self> {
        if config.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if num_items == 0 {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        if !(config.scale > 0.0 && config.scale.is_finite()) {
            return Err(Error::Config(format!("scale must be positive, got {}", config.scale)));
        }
        config.solver.validate()?;
        let d = config.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let bound = 1.0 / (d as f64).sqrt();
        let table = (0..num_items * d).map(|_| rng.random_range(-bound..bound)).collect();
        let embedding = store.add("embedding", Array::new(vec![num_items, d], table)?);
        let encoder = EncoderParams::register(&mut store, d, &config.encoder, &mut rng);
        let ode = OdeParams::register(&mut store, d, &mut rng);
        let readout = ReadoutParams::register(&mut store, d, &mut rng);
        Ok(Self {
            config,
            num_items,
            store,
            params: ModelParams {
                embedding,
                encoder,
                ode,
                readout,
            },
        })
    }

    /// Rebuilds a model around stored arrays; names and shapes must match the layout for `config`.
    pub fn from_arrays(config: ModelConfig, num_items: usize, arrays: Vec<(String, Array)>) -> Result<Self> {
        let mut model = Self::new(config, num_items, 0)?;
        if arrays.len() != model.store.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} parameter arrays, model needs {}",
                arrays.len(),
                model.store.len()
            )));
        }
        for (name, value) in arrays {
            let id = model
                .store
                .find(&name)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("unknown parameter {name}")))?;
            let slot = model.store.get_mut(id);
            if slot.shape() != value.shape() {
                return Err(Error::CorruptCheckpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    value.shape(),
                    slot.shape()
                )));
            }
            *slot = value;
        }
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// Records scoring of every prefix in `prefixes` on `tape`.
    pub fn forward(&self, tape: &mut Tape, prefixes: &[&Session]) -> Result<Forward> {
        if prefixes.is_empty() {
            return Err(Error::Usage("forward needs at least one prefix".into()));
        }
        if let Some(bad) = prefixes.iter().flat_map(|p| p.items()).find(|&i| i >= self.num_items) {
            return Err(Error::Usage(format!("item {bad} outside vocabulary of {}", self.num_items)));
        }
        let temporal: Vec<TemporalSessionGraph> = prefixes.iter().map(|p| TemporalSessionGraph::build(p)).collect();
        let statics: Vec<StaticSessionGraph> = prefixes.iter().map(|p| StaticSessionGraph::build(p)).collect();
        let batch = make_batch(&temporal);
        let union = StaticSessionGraph::disjoint_union(&statics);
        debug_assert_eq!(batch.items, union.items);

        let p = &self.params;
        let table = tape.param(&self.store, p.embedding);
        let x = tape.gather_rows(table, Arc::new(batch.items.clone()))?;
        let h0 = encode_initial(tape, &self.store, &union, x, &p.encoder)?;
        let gates = p.ode.on_tape(tape, &self.store);
        let h = solve(tape, h0, &batch, gates, x, &self.config.solver, self.config.dynamics)?.state;

        let r = p.readout.on_tape(tape, &self.store);
        let node_session = Arc::new(batch.node_session.clone());
        let recent = readout::recent_interest(tape, h, &batch.last)?;
        let long = readout::attention_longterm(tape, h, recent, &node_session, &r)?;
        let preference = readout::hybrid(tape, long, recent, r.w4)?;
        let scores = readout::score_items(tape, preference, table, self.config.scale)?;
        Ok(Forward {
            probs: scores.probs,
            logits: scores.logits,
        })
    }

    /// Squared norm of every parameter, recorded on `tape`.
    pub fn l2_penalty(&self, tape: &mut Tape) -> Result<Var> {
        let vars: Vec<Var> = self.store.ids().map(|id| tape.param(&self.store, id)).collect();
        readout::l2_penalty(tape, &vars)
    }

    /// Next-item distribution for each prefix, one row per prefix.
    pub fn predict(&self, prefixes: &[&Session]) -> Result<Array> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, prefixes)?;
        Ok(tape.value(out.probs).clone())
    }

    /// Mean cross-entropy of the prefixes against `targets` plus `lambda` times the squared parameter norm.
    pub fn loss(&self, tape: &mut Tape, prefixes: &[&Session], targets: &[usize], lambda: f64) -> Result<Var> {
        let out = self.forward(tape, prefixes)?;
        let vars: Vec<Var> = self.store.ids().map(|id| tape.param(&self.store, id)).collect();
        readout::compute_loss(tape, out.probs, targets, lambda, &vars)
    }
}
