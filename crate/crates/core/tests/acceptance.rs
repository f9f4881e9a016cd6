//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if any criterion fails.

use std::collections::BTreeMap;
use std::time::Instant;

use gngode::model::{Model, ModelConfig};
use gngode::numeric::check::relative_error;
use gngode::numeric::{finite_difference_gradient, Array, ParamStore, Tape};
use gngode::ode::{ode_rhs, solve_span, solve_values, t_align, GraphDynamics, OdeWeights, SolverConfig, SolverKind};
use gngode::pipeline::{evaluate, generate_synthetic, prepare, train, write_prepared, Checkpoint, Rule, SynthConfig, TrainConfig};
use gngode::session::{samples_from_raw, Click, RawSession, Sample, Session, TemporalSessionGraph, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn criterion<T>(id: usize, name: &str, limit: Option<f64>, f: impl FnOnce() -> (Verdict, T)) -> (bool, T) {
    let start = Instant::now();
    let (v, out) = f();
    let secs = start.elapsed().as_secs_f64();
    let in_time = limit.is_none_or(|l| secs < l);
    let pass = v.pass && in_time;
    let budget = limit.map(|l| format!(" / limit {l:.0}s")).unwrap_or_default();
    println!(
        "[{}] {id:>2} {name}: {} ({secs:.1}s{budget})",
        if pass { "PASS" } else { "FAIL" },
        v.detail
    );
    (pass, out)
}

fn random(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Array {
    let n = shape.iter().product();
    Array::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn random_session(rng: &mut impl Rng, items: usize, len: usize) -> Session {
    let mut time = 0.0;
    Session {
        id: "s".into(),
        clicks: (0..len)
            .map(|_| {
                time += rng.random_range(1.0..100.0);
                Click {
                    item: rng.random_range(0..items),
                    time,
                }
            })
            .collect(),
    }
}

fn slope(ks: &[usize], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = ks.iter().map(|&k| (k as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / xs.len() as f64, ys.iter().sum::<f64>() / ys.len() as f64);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    -cov / var
}

fn gradient_suite() -> Verdict {
    let config = ModelConfig {
        dim: 8,
        solver: SolverConfig::fixed(SolverKind::Rk4, 7),
        ..Default::default()
    };
    let model = Model::new(config, 6, 1).unwrap();
    let prefix = Session {
        id: "g".into(),
        clicks: vec![
            Click { item: 0, time: 0.0 },
            Click { item: 4, time: 40.0 },
            Click { item: 2, time: 55.0 },
        ],
    };
    let lambda = 1e-4;
    let loss_of = |store: &ParamStore| {
        let probe = Model {
            store: store.clone(),
            ..model.clone()
        };
        let mut tape = Tape::new();
        let l = probe.loss(&mut tape, &[&prefix], &[5], lambda).unwrap();
        tape.value(l).data()[0]
    };
    let mut tape = Tape::new();
    let l = model.loss(&mut tape, &[&prefix], &[5], lambda).unwrap();
    let grads = tape.backward(l).unwrap();
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    for (id, name, value) in model.store.iter() {
        let fd = finite_difference_gradient(
            |v| {
                let mut probe = model.store.clone();
                *probe.get_mut(id) = v.clone();
                loss_of(&probe)
            },
            value,
            1e-5,
        );
        let err = relative_error(grads.get(id).unwrap(), &fd, 1e-8);
        let group = name.split('.').next().unwrap().to_string();
        let slot = worst.entry(group).or_insert(0.0);
        *slot = slot.max(err);
    }
    let max = worst.values().cloned().fold(0.0, f64::max);
    let groups: Vec<String> = worst.iter().map(|(g, e)| format!("{g}={e:.1e}")).collect();
    verdict(max <= 1e-4, format!("max relative error {max:.2e} [{}]", groups.join(" ")))
}

fn boundedness_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(2..9);
        let len = rng.random_range(1..11);
        let graph = TemporalSessionGraph::build(&random_session(&mut rng, 10, len));
        let n = graph.num_nodes();
        let scale = rng.random_range(0.1..3.0);
        let w = OdeWeights::random(d, scale, &mut rng);
        let h0 = random(&mut rng, &[n, d], -1.0, 1.0);
        let x = random(&mut rng, &[n, d], -1.0, 1.0);
        let cfg = SolverConfig::fixed(SolverKind::Rk4, 8);
        let h1 = solve_values(&h0, &graph, &w, &x, &cfg, GraphDynamics::default()).unwrap();
        worst = worst.max(h1.max_abs());
    }

    let d = 4;
    let graph = TemporalSessionGraph::build(&random_session(&mut rng, 10, 4));
    let n = graph.num_nodes();
    let h0 = Array::new(vec![n, d], (0..n * d).map(|i| if i % 2 == 0 { 1.5 } else { -1.5 }).collect()).unwrap();
    let x = Array::zeros(&[n, d]);
    let mut norms = vec![h0.max_abs()];
    for t in [0.25, 0.5, 0.75, 1.0] {
        let cfg = SolverConfig::fixed(SolverKind::Rk4, 8);
        let h = solve_span(&h0, &graph, &OdeWeights::zeros(d), &x, &cfg, GraphDynamics::default(), 0.0, t).unwrap();
        norms.push(h.max_abs());
    }
    let contracts = norms.windows(2).all(|w| w[1] < w[0]);
    verdict(
        worst <= 1.001 && contracts,
        format!("max |H(1)| {worst:.6}; from 1.5: {}", norms.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" > ")),
    )
}

fn rhs_bound() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = rng.random_range(1..9);
        let len = rng.random_range(1..9);
        let graph = TemporalSessionGraph::build(&random_session(&mut rng, 8, len));
        let n = graph.num_nodes();
        let scale = rng.random_range(0.1..5.0);
        let w = OdeWeights::random(d, scale, &mut rng);
        let h = random(&mut rng, &[n, d], -1.0, 1.0);
        let x = random(&mut rng, &[n, d], -1.0, 1.0);
        let t = rng.random_range(0.0..=1.0);
        worst = worst.max(ode_rhs(&h, t, &graph, &w, &x, GraphDynamics::default()).unwrap().max_abs());
    }
    verdict(worst <= 2.0, format!("max |f| {worst:.6}"))
}

fn decay_error(cfg: SolverConfig) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let graph = TemporalSessionGraph::build(&random_session(&mut rng, 5, 5));
    let d = 4;
    let n = graph.num_nodes();
    let h0 = random(&mut rng, &[n, d], -1.0, 1.0);
    let x = random(&mut rng, &[n, d], -1.0, 1.0);
    let h1 = solve_values(&h0, &graph, &OdeWeights::zeros(d), &x, &cfg, GraphDynamics::default()).unwrap();
    h1.max_abs_diff(&h0.map(|v| v * (-0.5f64).exp()))
}

fn solver_order() -> Verdict {
    let ks = [4, 8, 16, 32, 64];
    let order = |kind| {
        let errors: Vec<f64> = ks.iter().map(|&k| decay_error(SolverConfig::fixed(kind, k))).collect();
        slope(&ks, &errors)
    };
    let (euler, rk4) = (order(SolverKind::Euler), order(SolverKind::Rk4));
    let dopri = decay_error(SolverConfig::dopri5(1e-6, 1e-6));
    verdict(
        (euler - 1.0).abs() <= 0.2 && (rk4 - 4.0).abs() <= 0.5 && dopri <= 1e-6,
        format!("euler slope {euler:.3}, rk4 slope {rk4:.3}, dopri5 error {dopri:.2e}"),
    )
}

fn alignment_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut monotone = true;
    for _ in 0..1000 {
        let len = rng.random_range(1..12);
        let graph = TemporalSessionGraph::build(&random_session(&mut rng, 8, len));
        let (a, b) = (rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0));
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (early, late) = (t_align(&graph, lo), t_align(&graph, hi));
        monotone &= early.edges.iter().all(|e| late.edges.contains(e));
    }

    let mut static_gap: f64 = 0.0;
    let static_dyn = GraphDynamics {
        t_alignment: false,
        ..Default::default()
    };
    for _ in 0..20 {
        let d = 4;
        let len = rng.random_range(2..9);
        let mut graph = TemporalSessionGraph::build(&random_session(&mut rng, 6, len));
        graph.edges.iter_mut().for_each(|e| e.time = 0.0);
        let n = graph.num_nodes();
        let w = OdeWeights::random(d, 1.0, &mut rng);
        let h0 = random(&mut rng, &[n, d], -1.0, 1.0);
        let x = random(&mut rng, &[n, d], -1.0, 1.0);
        for cfg in [SolverConfig::fixed(SolverKind::Rk4, 7), SolverConfig::dopri5(1e-6, 1e-8)] {
            let aligned = solve_values(&h0, &graph, &w, &x, &cfg, GraphDynamics::default()).unwrap();
            let fixed = solve_values(&h0, &graph, &w, &x, &cfg, static_dyn).unwrap();
            static_gap = static_gap.max(aligned.max_abs_diff(&fixed));
        }
    }

    let mut restricted = true;
    for _ in 0..500 {
        let len = rng.random_range(2..12);
        let s = random_session(&mut rng, 8, len);
        let t = rng.random_range(1..len);
        let full = TemporalSessionGraph::build(&s);
        let part = TemporalSessionGraph::build(&Session {
            id: s.id.clone(),
            clicks: s.clicks[..=t].to_vec(),
        });
        let cutoff = (s.clicks[t].time - s.clicks[0].time) / (s.clicks[len - 1].time - s.clicks[0].time);
        let kept: Vec<(usize, usize)> = full
            .edges
            .iter()
            .filter(|e| e.time <= cutoff)
            .map(|e| (full.items[e.source], full.items[e.target]))
            .collect();
        let expected: Vec<(usize, usize)> = part.edges.iter().map(|e| (part.items[e.source], part.items[e.target])).collect();
        restricted &= kept == expected && full.items[..part.items.len()] == part.items[..];
    }
    verdict(
        monotone && static_gap <= 1e-10 && restricted,
        format!("monotone {monotone}, static gap {static_gap:.1e}, prefix restriction {restricted}"),
    )
}

struct Corpus {
    raw: Vec<RawSession>,
    vocabulary: Vocabulary,
    train: Vec<Sample>,
    valid: Vec<Sample>,
}

fn corpus(rule: Rule, seed: u64) -> Corpus {
    let raw = generate_synthetic(&SynthConfig {
        num_items: 50,
        num_sessions: 2000,
        rule,
        noise: 0.1,
        seed,
    })
    .unwrap();
    let p = prepare(&raw, 2, 5).unwrap();
    let (train, _) = samples_from_raw(&p.train, &p.vocabulary);
    let (valid, _) = samples_from_raw(&p.valid, &p.vocabulary);
    Corpus {
        raw,
        vocabulary: p.vocabulary,
        train,
        valid,
    }
}

fn learning_config() -> TrainConfig {
    TrainConfig {
        dim: 64,
        batch_size: 64,
        micro_batch: 64,
        lr: 3e-3,
        lambda: 1e-4,
        epochs: 8,
        seed: 42,
        solver: SolverKind::Rk4,
        steps_per_unit: 7,
        cutoffs: vec![1, 10],
        ..Default::default()
    }
}

fn learning_sanity(data: &Corpus) -> (Verdict, Model) {
    let cfg = learning_config();
    let out = train(&cfg, data.vocabulary.len(), &data.train).unwrap();
    let report = evaluate(&out.model, &data.valid, &cfg.cutoffs, 0).unwrap();
    let (hr1, mrr10) = (report.hr(1).unwrap(), report.mrr_at(10).unwrap());
    let v = verdict(
        hr1 >= 0.9 && mrr10 >= 0.9,
        format!(
            "HR@1 {hr1:.4}, MRR@10 {mrr10:.4} on {} held-out samples after {} epochs (random HR@1 {:.2})",
            data.valid.len(),
            cfg.epochs,
            1.0 / data.vocabulary.len() as f64
        ),
    );
    (v, out.model)
}

fn alignment_ablation() -> Verdict {
    let data = corpus(Rule::Markov, 7);
    let mut aligned = Vec::new();
    let mut fixed = Vec::new();
    for seed in [1, 2, 3] {
        for t_alignment in [true, false] {
            let cfg = TrainConfig {
                dim: 32,
                seed,
                t_alignment,
                epochs: 6,
                ..learning_config()
            };
            let out = train(&cfg, data.vocabulary.len(), &data.train).unwrap();
            let mrr = evaluate(&out.model, &data.valid, &[10], 0).unwrap().mrr[0];
            if t_alignment { aligned.push(mrr) } else { fixed.push(mrr) }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (a, f) = (mean(&aligned), mean(&fixed));
    verdict(
        a >= f,
        format!("mean MRR@10 t-aligned {a:.4} vs static {f:.4} (per seed {aligned:.4?} vs {fixed:.4?})"),
    )
}

fn solver_sensitivity(model: &Model, data: &Corpus) -> Verdict {
    // Decided on MRR@20; HR@20 is printed alongside for context.
    let metrics = |kind, k| {
        let mut m = model.clone();
        m.config.solver = SolverConfig::fixed(kind, k);
        let r = evaluate(&m, &data.valid, &[20], 0).unwrap();
        (r.mrr[0], r.hit_rate[0])
    };
    let ((r1, rh1), (r7, rh7)) = (metrics(SolverKind::Rk4, 1), metrics(SolverKind::Rk4, 7));
    let ((e1, eh1), (e7, eh7)) = (metrics(SolverKind::Euler, 1), metrics(SolverKind::Euler, 7));
    let (rk4_gap, euler_gap) = ((r7 - r1).abs(), (e7 - e1).abs());
    verdict(
        r7 >= r1 && euler_gap > rk4_gap,
        format!(
            "MRR@20 rk4 k=1 {r1:.4} k=7 {r7:.4}, euler k=1 {e1:.4} k=7 {e7:.4}, gaps euler {euler_gap:.4} rk4 {rk4_gap:.4}; \
             HR@20 rk4 {rh1:.4}/{rh7:.4} euler {eh1:.4}/{eh7:.4}"
        ),
    )
}

fn determinism() -> Verdict {
    let raw = generate_synthetic(&SynthConfig {
        num_items: 20,
        num_sessions: 300,
        rule: Rule::Markov,
        noise: 0.1,
        seed: 9,
    })
    .unwrap();
    let p = prepare(&raw, 2, 1).unwrap();
    let (train_s, _) = samples_from_raw(&p.train, &p.vocabulary);
    let (valid_s, _) = samples_from_raw(&p.valid, &p.vocabulary);
    let cfg = TrainConfig {
        dim: 16,
        batch_size: 32,
        micro_batch: 8,
        epochs: 2,
        ..Default::default()
    };
    let run = || {
        let out = train(&cfg, p.vocabulary.len(), &train_s).unwrap();
        let report = evaluate(&out.model, &valid_s, &cfg.cutoffs, 0).unwrap();
        (Checkpoint::new(&out.model, p.vocabulary.clone(), cfg.clone()).to_bytes(), report.to_string())
    };
    let (a, b) = (run(), run());
    verdict(
        a.0 == b.0 && a.1 == b.1,
        format!("checkpoints identical {}, reports identical {}", a.0 == b.0, a.1 == b.1),
    )
}

fn round_trips(model: &Model, data: &Corpus) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let (first, second) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    Checkpoint::new(model, data.vocabulary.clone(), learning_config()).save(&first).unwrap();
    Checkpoint::load(&first).unwrap().save(&second).unwrap();
    let checkpoint = std::fs::read(&first).unwrap() == std::fs::read(&second).unwrap();

    let (a, b) = (dir.path().join("p1"), dir.path().join("p2"));
    write_prepared(&prepare(&data.raw, 2, 5).unwrap(), &a).unwrap();
    write_prepared(&prepare(&data.raw, 2, 5).unwrap(), &b).unwrap();
    let prepared = ["vocab.csv", "train.csv", "valid.csv"]
        .iter()
        .all(|f| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap());
    verdict(
        checkpoint && prepared,
        format!("checkpoint save/load/save identical {checkpoint}, prepare rerun identical {prepared}"),
    )
}

#[test]
fn acceptance() {
    let mut results = Vec::new();
    results.push(criterion(1, "gradients", Some(10.0), || (gradient_suite(), ())).0);
    results.push(criterion(2, "boundedness", Some(30.0), || (boundedness_suite(), ())).0);
    results.push(criterion(3, "rhs bound", Some(5.0), || (rhs_bound(), ())).0);
    results.push(criterion(4, "solver order", Some(10.0), || (solver_order(), ())).0);
    results.push(criterion(5, "t-alignment", Some(30.0), || (alignment_suite(), ())).0);
    let data = corpus(Rule::Cycle, 42);
    let (pass, model) = criterion(6, "learning sanity", Some(600.0), || learning_sanity(&data));
    results.push(pass);
    results.push(criterion(7, "t-alignment ablation", Some(1200.0), || (alignment_ablation(), ())).0);
    results.push(criterion(8, "solver sensitivity", None, || (solver_sensitivity(&model, &data), ())).0);
    results.push(criterion(9, "determinism", None, || (determinism(), ())).0);
    results.push(criterion(10, "round trips", None, || (round_trips(&model, &data), ())).0);
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    assert_eq!(passed, results.len());
}
