use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numeric::{Adam, AdamState, Gradients, Tape};
use crate::readout;
use crate::session::Sample;

use super::config::TrainConfig;

/// Stream of the shuffling generator; initialization uses the default stream.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    /// Sample-weighted mean batch loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

/// Loss and gradients of one micro-batch. The cross-entropy is divided by
/// `batch_len`, the size of the enclosing batch, so micro-batch losses add up
/// to the batch mean.
fn micro_step(model: &Model, samples: &[&Sample], batch_len: usize, lambda: Option<f64>) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let prefixes: Vec<_> = samples.iter().map(|s| &s.prefix).collect();
    let targets: Vec<usize> = samples.iter().map(|s| s.target).collect();
    let out = model.forward(&mut tape, &prefixes)?;
    let bce = readout::bce_sum(&mut tape, out.probs, &targets)?;
    let mut terms = vec![(1.0 / batch_len as f64, bce)];
    if let Some(lambda) = lambda.filter(|&l| l > 0.0) {
        terms.push((lambda, model.l2_penalty(&mut tape)?));
    }
    let loss = tape.lincomb(&terms)?;
    let value = tape.value(loss).data()[0];
    Ok((value, tape.backward(loss)?))
}

/// Loss and summed gradients of a batch. Micro-batches run in parallel but are
/// reduced in order, so the result does not depend on the thread count.
pub fn batch_gradients(model: &Model, batch: &[&Sample], micro_batch: usize, lambda: f64) -> Result<(f64, Gradients)> {
    let parts: Vec<(f64, Gradients)> = batch
        .par_chunks(micro_batch.max(1))
        .enumerate()
        .map(|(i, chunk)| micro_step(model, chunk, batch.len(), (i == 0).then_some(lambda)))
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grads = Gradients::default();
    for (l, g) in parts {
        loss += l;
        grads.accumulate(g);
    }
    Ok((loss, grads))
}

/// Trains a freshly initialized model.
pub fn train(config: &TrainConfig, num_items: usize, samples: &[Sample]) -> Result<TrainOutcome> {
    config.validate()?;
    let model = Model::new(config.model_config(), num_items, config.seed)?;
    train_model(model, config, samples)
}

/// Runs `config.epochs` epochs of seeded shuffling, batching and Adam updates on `model`.
pub fn train_model(mut model: Model, config: &TrainConfig, samples: &[Sample]) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Dataset("no training samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let adam = Adam::new(config.lr);
    let mut state = AdamState::new(&model.store);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
            let (loss, grads) = batch_gradients(&model, &batch, config.micro_batch, config.lambda)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            adam.step(&mut model.store, &grads, &mut state);
            total += loss * batch.len() as f64;
            debug!("epoch {epoch} batch {b} loss {loss:.6}");
        }
        let mean = total / samples.len() as f64;
        info!("epoch {epoch} mean loss {mean:.6}");
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome { model, epoch_losses })
}

/// Loss log lines, `epoch,mean_loss`.
pub fn format_loss_log(losses: &[f64]) -> String {
    losses
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{},{}\n", i + 1, l))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{Click, Session};

    fn sample(items: &[usize], target: usize) -> Sample {
        Sample {
            prefix: Session {
                id: "s".into(),
                clicks: items
                    .iter()
                    .enumerate()
                    .map(|(i, &item)| Click { item, time: 10.0 * i as f64 })
                    .collect(),
            },
            target,
        }
    }

    fn tiny() -> TrainConfig {
        TrainConfig {
            dim: 4,
            batch_size: 4,
            micro_batch: 2,
            epochs: 3,
            ..Default::default()
        }
    }

    fn data() -> Vec<Sample> {
        vec![
            sample(&[0], 1),
            sample(&[0, 1], 2),
            sample(&[1, 2], 3),
            sample(&[2, 3, 2], 4),
            sample(&[4], 0),
        ]
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let cfg = TrainConfig { lr: 0.0, ..tiny() };
        let init = Model::new(cfg.model_config(), 5, cfg.seed).unwrap();
        let out = train(&cfg, 5, &data()).unwrap();
        for ((_, _, a), (_, _, b)) in init.store.iter().zip(out.model.store.iter()) {
            assert_eq!(a, b);
        }
        let first = out.epoch_losses[0];
        assert!(out.epoch_losses.iter().all(|&l| (l - first).abs() < 1e-12));
    }

    #[test]
    fn micro_batching_matches_whole_batch() {
        let cfg = tiny();
        let model = Model::new(cfg.model_config(), 5, 1).unwrap();
        let d = data();
        let batch: Vec<&Sample> = d.iter().collect();
        let (l1, g1) = batch_gradients(&model, &batch, 2, 1e-3).unwrap();
        let (l5, g5) = batch_gradients(&model, &batch, 5, 1e-3).unwrap();
        assert!((l1 - l5).abs() < 1e-12);
        for (id, g) in g1.iter() {
            assert!(g.max_abs_diff(g5.get(id).unwrap()) < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_run() {
        let a = train(&tiny(), 5, &data()).unwrap();
        let b = train(&tiny(), 5, &data()).unwrap();
        assert_eq!(a.epoch_losses, b.epoch_losses);
        for ((_, _, x), (_, _, y)) in a.model.store.iter().zip(b.model.store.iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(matches!(train(&tiny(), 5, &[]), Err(Error::Dataset(_))));
    }

    #[test]
    fn loss_log_format() {
        assert_eq!(format_loss_log(&[1.5, 0.25]), "1,1.5\n2,0.25\n");
        assert_eq!(format_loss_log(&[]), "");
    }
}
