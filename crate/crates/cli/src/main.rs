use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use gngode::encoder::EncoderKind;
use gngode::ode::{Adjacency, SolverConfig, SolverKind};
use gngode::pipeline::{
    self, evaluate, format_loss_log, generate_synthetic, load_samples, load_vocabulary, top_k, train, Checkpoint,
    EvalReport, Rule, SynthConfig, TrainConfig,
};
use gngode::session::{parse_sessions, write_sessions, Click, Session};

#[derive(Parser, Debug)]
#[command(name = "gngode", version, about = "Continuous-time session recommendation with a graph-nested GRU ODE")]
struct Cli {
    /// Log progress to stderr (repeat for more detail)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter a raw click log and write vocab.csv, train.csv and valid.csv
    Prepare(PrepareArgs),
    /// Generate a synthetic click log with a known next-item rule
    Synth(SynthArgs),
    /// Train a model on a prepared data directory
    Train(TrainArgs),
    /// Report HR@K and MRR@K of one or more checkpoints
    Evaluate(EvaluateArgs),
    /// Rank the catalog for a single session
    Recommend(RecommendArgs),
    /// Compare ODE solvers and step counts on a trained checkpoint
    SolverBench(BenchArgs),
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// Raw click log (session_id,item_key,timestamp)
    #[arg(long)]
    input: PathBuf,
    /// Directory receiving vocab.csv, train.csv and valid.csv
    #[arg(long)]
    output_dir: PathBuf,
    /// Drop items clicked fewer times than this across the log
    #[arg(long, default_value_t = 5)]
    min_item_freq: usize,
    /// Drop sessions shorter than this after item filtering
    #[arg(long, default_value_t = 2)]
    min_session_len: usize,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output click log
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 50)]
    num_items: usize,
    #[arg(long, default_value_t = 2000)]
    num_sessions: usize,
    /// Next-item rule: cycle or markov
    #[arg(long, default_value = "cycle")]
    rule: Rule,
    /// Probability of replacing a successor with a uniform random item, in [0, 1)
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

/// Overrides for every key of the training configuration.
#[derive(Args, Debug, Default)]
struct ConfigFlags {
    /// Hidden width [default: 128]
    #[arg(long)]
    dim: Option<usize>,
    /// Samples per optimizer step [default: 512]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Samples per forward pass within a batch [default: 64]
    #[arg(long)]
    micro_batch: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// L2 penalty weight [default: 0.0001]
    #[arg(long)]
    lambda: Option<f64>,
    /// Training epochs [default: 30]
    #[arg(long)]
    epochs: Option<usize>,
    /// ODE solver: euler, rk4 or dopri5 [default: rk4]
    #[arg(long)]
    solver: Option<SolverKind>,
    /// Fixed-step solver steps per unit time [default: 7]
    #[arg(long)]
    steps: Option<usize>,
    /// Adaptive solver relative tolerance [default: 0.001]
    #[arg(long)]
    rtol: Option<f64>,
    /// Adaptive solver absolute tolerance [default: 0.0001]
    #[arg(long)]
    atol: Option<f64>,
    /// Adaptive solver step budget per solve [default: 1000]
    #[arg(long)]
    max_steps: Option<usize>,
    /// Initial-state encoder: ggnn, mlp or identity [default: ggnn]
    #[arg(long)]
    encoder: Option<EncoderKind>,
    /// Encoder layers [default: 1]
    #[arg(long)]
    layers: Option<usize>,
    /// Aggregate over both edge directions in the encoder [default: true]
    #[arg(long)]
    bidirectional: Option<bool>,
    /// Softmax scale on cosine scores [default: 12]
    #[arg(long)]
    scale: Option<f64>,
    /// Switch edges on at their timestamps during integration [default: true]
    #[arg(long)]
    t_alignment: Option<bool>,
    /// Graph-convolution normalization: symmetric or directed [default: symmetric]
    #[arg(long)]
    adjacency: Option<Adjacency>,
    /// Evaluation cutoffs [default: 10,20]
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON file with configuration keys; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory written by `prepare`
    #[arg(long)]
    data_dir: PathBuf,
    /// Output directory for checkpoints and loss logs
    #[arg(long)]
    out: PathBuf,
    /// Random seed; a comma-separated list trains one model per seed [default: 42]
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Checkpoint file; a comma-separated list reports mean and standard deviation
    #[arg(long, value_delimiter = ',', required = true)]
    checkpoint: Vec<PathBuf>,
    /// Click log to evaluate on
    #[arg(long)]
    data: PathBuf,
    /// Cutoffs
    #[arg(long, value_delimiter = ',', default_value = "10,20")]
    k: Vec<usize>,
}

#[derive(Args, Debug)]
struct RecommendArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Clicks as item_key:timestamp pairs separated by commas
    #[arg(long)]
    session: String,
    /// Number of items to print
    #[arg(long, default_value_t = 20)]
    topk: usize,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Click log to evaluate on
    #[arg(long)]
    data: PathBuf,
    /// Solvers to compare
    #[arg(long, value_delimiter = ',', default_value = "euler,rk4,dopri5")]
    solvers: Vec<SolverKind>,
    /// Steps per unit time for the fixed-step solvers
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,7,9")]
    steps: Vec<usize>,
    /// Relative tolerance for dopri5
    #[arg(long, default_value_t = 1e-3)]
    rtol: f64,
    /// Absolute tolerance for dopri5
    #[arg(long, default_value_t = 1e-4)]
    atol: f64,
    /// Write `na` instead of wall times so reruns are byte-identical
    #[arg(long)]
    omit_timing: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            match e.downcast_ref::<gngode::Error>() {
                Some(gngode::Error::Usage(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare(a) => prepare(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Recommend(a) => recommend(a),
        Command::SolverBench(a) => solver_bench(a),
    }
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let raw = parse_sessions(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let prepared = pipeline::prepare(&raw, a.min_session_len, a.min_item_freq)?;
    pipeline::write_prepared(&prepared, &a.output_dir)?;
    println!("items={}", prepared.vocabulary.len());
    println!("train_sessions={}", prepared.train.len());
    println!("valid_sessions={}", prepared.valid.len());
    println!("filtered_items={}", prepared.filtered_items);
    println!("dropped_sessions={}", prepared.dropped_sessions);
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let sessions = generate_synthetic(&SynthConfig {
        num_items: a.num_items,
        num_sessions: a.num_sessions,
        rule: a.rule,
        noise: a.noise,
        seed: a.seed,
    })?;
    let file = File::create(&a.output).with_context(|| format!("creating {}", a.output.display()))?;
    write_sessions(BufWriter::new(file), &sessions)?;
    Ok(())
}

fn build_config(file: Option<&Path>, f: &ConfigFlags) -> Result<TrainConfig> {
    let mut cfg = match file {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            TrainConfig::from_json(&text).with_context(|| format!("config file {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = f.$flag.clone() { cfg.$field = v; })*
        };
    }
    set!(dim => dim, batch_size => batch_size, micro_batch => micro_batch, lr => lr, lambda => lambda,
         epochs => epochs, solver => solver, steps => steps_per_unit, rtol => rtol, atol => atol,
         max_steps => max_steps, layers => layers, bidirectional => bidirectional, scale => scale,
         t_alignment => t_alignment, k => cutoffs, encoder => encoder, adjacency => adjacency);
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let base = build_config(a.config.as_deref(), &a.flags)?;
    let seeds = a.seed.clone().unwrap_or_else(|| vec![base.seed]);
    if seeds.is_empty() {
        bail!(gngode::Error::Usage("--seed needs at least one value".into()));
    }
    let vocab = load_vocabulary(&a.data_dir)?;
    let data = load_samples(a.data_dir.join(pipeline::prepare::TRAIN_FILE), &vocab)?;
    info!("{} training samples, {} items", data.samples.len(), vocab.len());
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    for &seed in &seeds {
        let cfg = TrainConfig { seed, ..base.clone() };
        let outcome = if cfg.epochs == 0 {
            let model = gngode::model::Model::new(cfg.model_config(), vocab.len(), seed)?;
            pipeline::TrainOutcome {
                model,
                epoch_losses: Vec::new(),
            }
        } else {
            train(&cfg, vocab.len(), &data.samples)?
        };
        let (ckpt, log) = if seeds.len() == 1 {
            ("model.ckpt".to_string(), "loss.csv".to_string())
        } else {
            (format!("model.seed{seed}.ckpt"), format!("loss.seed{seed}.csv"))
        };
        Checkpoint::new(&outcome.model, vocab.clone(), cfg).save(a.out.join(&ckpt))?;
        fs::write(a.out.join(&log), format_loss_log(&outcome.epoch_losses))?;
        println!("{}", a.out.join(&ckpt).display());
    }
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let mut reports: Vec<EvalReport> = Vec::new();
    for path in &a.checkpoint {
        let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
        let model = ck.model()?;
        let data = load_samples(&a.data, &ck.vocabulary)?;
        reports.push(evaluate(&model, &data.samples, &a.k, data.skipped)?);
    }
    let mut out = io::stdout().lock();
    if let [report] = &reports[..] {
        write!(out, "{report}")?;
        return Ok(());
    }
    let stats = |values: Vec<f64>| {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    };
    for (metric, pick) in [("HR", 0), ("MRR", 1)] {
        for (i, k) in a.k.iter().enumerate() {
            let values = reports.iter().map(|r| if pick == 0 { r.hit_rate[i] } else { r.mrr[i] }).collect();
            let (mean, sd) = stats(values);
            writeln!(out, "{metric}@{k}={mean:.6}")?;
            writeln!(out, "{metric}@{k}.stdev={sd:.6}")?;
        }
    }
    writeln!(out, "checkpoints={}", reports.len())?;
    writeln!(out, "samples={}", reports[0].samples)?;
    writeln!(out, "skipped={}", reports[0].skipped)?;
    Ok(())
}

fn parse_session_arg(text: &str) -> Result<Vec<(String, f64)>> {
    text.split(',')
        .map(|part| {
            let (item, time) = part
                .rsplit_once(':')
                .ok_or_else(|| gngode::Error::Usage(format!("expected item_key:timestamp, found {part:?}")))?;
            let time: f64 = time
                .trim()
                .parse()
                .ok()
                .filter(|t: &f64| t.is_finite() && *t >= 0.0)
                .ok_or_else(|| gngode::Error::Usage(format!("bad timestamp in {part:?}")))?;
            if item.trim().is_empty() {
                bail!(gngode::Error::Usage(format!("empty item key in {part:?}")));
            }
            Ok((item.trim().to_string(), time))
        })
        .collect()
}

fn recommend(a: RecommendArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let model = ck.model()?;
    let mut clicks = Vec::new();
    for (key, time) in parse_session_arg(&a.session)? {
        match ck.vocabulary.index_of(&key) {
            Some(item) => clicks.push(Click { item, time }),
            None => warn!("skipping unknown item {key:?}"),
        }
    }
    if clicks.is_empty() {
        bail!(gngode::Error::Usage("no item of the session is in the vocabulary".into()));
    }
    clicks.sort_by(|x, y| x.time.total_cmp(&y.time));
    let session = Session {
        id: "query".into(),
        clicks,
    };
    let probs = model.predict(&[&session])?;
    let scores = probs.row(0);
    let mut out = io::stdout().lock();
    writeln!(out, "rank,item,score")?;
    for (rank, item) in top_k(scores, a.topk).into_iter().enumerate() {
        writeln!(out, "{},{},{}", rank + 1, ck.vocabulary.key(item), scores[item])?;
    }
    Ok(())
}

fn solver_bench(a: BenchArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let mut model = ck.model()?;
    let data = load_samples(&a.data, &ck.vocabulary)?;
    let mut settings: Vec<(SolverConfig, String)> = Vec::new();
    for &kind in &a.solvers {
        if kind.is_adaptive() {
            settings.push((
                SolverConfig {
                    max_steps: ck.config.max_steps,
                    ..SolverConfig::dopri5(a.rtol, a.atol)
                },
                format!("rtol={}/atol={}", a.rtol, a.atol),
            ));
        } else {
            settings.extend(a.steps.iter().map(|&k| (SolverConfig::fixed(kind, k), k.to_string())));
        }
    }
    let mut out = io::stdout().lock();
    writeln!(out, "solver,setting,hr@20,mrr@20,wall_time_s")?;
    for (solver, label) in settings {
        solver.validate()?;
        model.config.solver = solver;
        let start = Instant::now();
        let report = evaluate(&model, &data.samples, &[20], data.skipped)?;
        let elapsed = start.elapsed().as_secs_f64();
        let time = if a.omit_timing { "na".to_string() } else { format!("{elapsed:.3}") };
        writeln!(
            out,
            "{},{},{:.6},{:.6},{}",
            solver.kind.name(),
            label,
            report.hit_rate[0],
            report.mrr[0],
            time
        )?;
        out.flush()?;
    }
    Ok(())
}
