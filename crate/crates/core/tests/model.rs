use std::sync::Arc;

use gngode::encoder::{encode_initial, EncoderConfig, EncoderParams};
use gngode::model::{Model, ModelConfig};
use gngode::numeric::check::relative_error;
use gngode::numeric::{finite_difference_gradient, Array, ParamStore, Tape};
use gngode::ode::{SolverConfig, SolverKind};
use gngode::readout::{attention_weights, compute_loss, recent_interest, ReadoutParams};
use gngode::session::{Click, Session, StaticSessionGraph};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn session(clicks: &[(usize, f64)]) -> Session {
    Session {
        id: "s".into(),
        clicks: clicks.iter().map(|&(item, time)| Click { item, time }).collect(),
    }
}

fn model(d: usize, items: usize) -> Model {
    let config = ModelConfig {
        dim: d,
        solver: SolverConfig::fixed(SolverKind::Rk4, 4),
        ..Default::default()
    };
    Model::new(config, items, 17).unwrap()
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let m = model(4, 5);
    let prefix = session(&[(0, 0.0), (1, 4.0), (2, 9.0), (1, 10.0)]);
    let lambda = 1e-2;
    let loss_of = |store: &ParamStore| {
        let probe = Model { store: store.clone(), ..m.clone() };
        let mut tape = Tape::new();
        let l = probe.loss(&mut tape, &[&prefix], &[3], lambda).unwrap();
        tape.value(l).data()[0]
    };
    let mut tape = Tape::new();
    let l = m.loss(&mut tape, &[&prefix], &[3], lambda).unwrap();
    let grads = tape.backward(l).unwrap();
    for (id, name, value) in m.store.iter() {
        let fd = finite_difference_gradient(
            |v| {
                let mut probe = m.store.clone();
                *probe.get_mut(id) = v.clone();
                loss_of(&probe)
            },
            value,
            1e-5,
        );
        let err = relative_error(grads.get(id).unwrap(), &fd, 1e-8);
        assert!(err <= 1e-4, "{name}: {err}");
    }
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let d = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let cfg = EncoderConfig {
        layers: 2,
        ..Default::default()
    };
    let params = EncoderParams::register(&mut store, d, &cfg, &mut rng);
    let x_id = store.add("x", Array::new(vec![3, d], (0..3 * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap());
    let graph = StaticSessionGraph::build(&session(&[(0, 0.0), (1, 1.0), (2, 2.0), (0, 3.0)]));
    let proj = Array::new(vec![3, d], (0..3 * d).map(|i| (i as f64).cos()).collect()).unwrap();
    let run = |store: &ParamStore| {
        let mut tape = Tape::new();
        let x = tape.param(store, x_id);
        let h = encode_initial(&mut tape, store, &graph, x, &params).unwrap();
        let p = tape.constant(proj.clone());
        let prod = tape.mul(h, p).unwrap();
        let s = tape.sum(prod);
        let value = tape.value(s).data()[0];
        (value, tape.backward(s).unwrap())
    };
    let grads = run(&store).1;
    for (id, name, value) in store.iter() {
        let fd = finite_difference_gradient(
            |v| {
                let mut probe = store.clone();
                *probe.get_mut(id) = v.clone();
                run(&probe).0
            },
            value,
            1e-5,
        );
        assert!(relative_error(grads.get(id).unwrap(), &fd, 1e-8) <= 1e-5, "{name}");
    }
}

#[test]
fn scoring_uses_the_encoder_embedding_table() {
    let m = model(4, 5);
    let mut tape = Tape::new();
    let prefix = session(&[(2, 0.0)]);
    let out = m.forward(&mut tape, &[&prefix]).unwrap();
    let total = tape.sum(out.logits);
    let grads = tape.backward(total).unwrap();
    // Rows of items absent from the session only receive gradient through scoring.
    let g = grads.get(m.params.embedding).unwrap();
    assert!(g.row(0).iter().any(|&v| v != 0.0));
    assert!(g.row(2).iter().any(|&v| v != 0.0));
}

#[test]
fn forward_outputs_bounded_scores() {
    let m = model(6, 8);
    let prefixes = [session(&[(0, 0.0), (3, 1.0)]), session(&[(7, 0.0), (7, 2.0), (1, 3.0)])];
    let refs: Vec<&Session> = prefixes.iter().collect();
    let mut tape = Tape::new();
    let out = m.forward(&mut tape, &refs).unwrap();
    assert!(tape.value(out.logits).max_abs() <= 1.0 + 1e-12);
    for r in 0..2 {
        let total: f64 = tape.value(out.probs).row(r).iter().sum();
        assert!((total - 1.0).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn attention_is_a_convex_combination(seed: u64, sizes in prop::collection::vec(1usize..5, 1..4)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 3;
        let mut store = ParamStore::new();
        let p = ReadoutParams::register(&mut store, d, &mut rng);
        let node_session: Vec<usize> = sizes.iter().enumerate().flat_map(|(s, &n)| std::iter::repeat_n(s, n)).collect();
        let n = node_session.len();
        let mut last = Vec::new();
        let mut end = 0;
        for &size in &sizes {
            end += size;
            last.push(end - 1);
        }
        let h = Array::new(vec![n, d], (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut tape = Tape::new();
        let vars = p.on_tape(&mut tape, &store);
        let hv = tape.constant(h);
        let recent = recent_interest(&mut tape, hv, &last).unwrap();
        let gamma = attention_weights(&mut tape, hv, recent, &Arc::new(node_session.clone()), &vars).unwrap();
        let g = tape.value(gamma).data();
        prop_assert!(g.iter().all(|&x| x >= 0.0));
        for s in 0..sizes.len() {
            let total: f64 = g.iter().zip(&node_session).filter(|(_, &o)| o == s).map(|(x, _)| x).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn loss_is_non_negative_and_falls_with_target_probability(
        raw in prop::collection::vec(0.01f64..1.0, 2..6),
        target_pick: usize,
        boost in 0.01f64..0.9,
    ) {
        let target = target_pick % raw.len();
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|x| x / total).collect();
        // Move mass towards the target and shrink the rest proportionally.
        let shrink = 1.0 - boost;
        let better: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(i, &p)| if i == target { p + boost * (1.0 - p) } else { p * shrink })
            .collect();
        let loss = |p: &[f64]| {
            let mut tape = Tape::new();
            let v = tape.constant(Array::matrix(1, p.len(), p.to_vec()).unwrap());
            let l = compute_loss(&mut tape, v, &[target], 0.0, &[]).unwrap();
            tape.value(l).data()[0]
        };
        let (before, after) = (loss(&probs), loss(&better));
        prop_assert!(before >= 0.0 && after >= 0.0);
        prop_assert!(after < before);
    }
}
