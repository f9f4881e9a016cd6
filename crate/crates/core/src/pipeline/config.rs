use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderKind};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::ode::{Adjacency, GraphDynamics, SolverConfig, SolverKind};

/// Every knob of a training run, as one flat record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub batch_size: usize,
    /// Samples per tape; gradients of a batch are accumulated over micro-batches.
    pub micro_batch: usize,
    pub lr: f64,
    /// Weight of the squared parameter norm in the loss.
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    pub solver: SolverKind,
    pub steps_per_unit: usize,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub encoder: EncoderKind,
    pub layers: usize,
    pub bidirectional: bool,
    pub scale: f64,
    pub t_alignment: bool,
    pub adjacency: Adjacency,
    pub cutoffs: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            batch_size: 512,
            micro_batch: 64,
            lr: 1e-3,
            lambda: 1e-4,
            epochs: 30,
            seed: 42,
            solver: SolverKind::Rk4,
            steps_per_unit: 7,
            rtol: 1e-3,
            atol: 1e-4,
            max_steps: 1000,
            encoder: EncoderKind::Ggnn,
            layers: 1,
            bidirectional: true,
            scale: 12.0,
            t_alignment: true,
            adjacency: Adjacency::Symmetric,
            cutoffs: vec![10, 20],
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("batch_size", self.batch_size),
            ("micro_batch", self.micro_batch),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be non-negative, got {}", self.lr)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("scale must be positive, got {}", self.scale)));
        }
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            return Err(Error::Config("cutoffs must be a non-empty list of positive integers".into()));
        }
        self.solver_config().validate()
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            kind: self.solver,
            steps_per_unit: self.steps_per_unit,
            rtol: self.rtol,
            atol: self.atol,
            max_steps: self.max_steps,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            encoder: EncoderConfig {
                kind: self.encoder,
                layers: self.layers,
                bidirectional: self.bidirectional,
            },
            solver: self.solver_config(),
            dynamics: GraphDynamics {
                t_alignment: self.t_alignment,
                adjacency: self.adjacency,
            },
            scale: self.scale,
        }
    }
}
