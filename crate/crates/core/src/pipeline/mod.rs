//! Training, evaluation, checkpoints and data preparation.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod prepare;
pub mod synth;
pub mod train;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use config::TrainConfig;
pub use eval::{evaluate, rank_of, top_k, EvalReport};
pub use prepare::{load_samples, load_vocabulary, prepare, write_prepared, Prepared, SampleSet};
pub use synth::{generate_synthetic, Rule, SynthConfig};
pub use train::{format_loss_log, train, train_model, TrainOutcome};
