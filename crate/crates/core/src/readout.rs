//! Session preference vectors, item scores and the training objective.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{Array, ParamId, ParamStore, Tape, Var};

/// Logs inside the loss are clamped at this value.
pub const LOG_FLOOR: f64 = 1e-12;

/// Attention weights `w1` (`1 x d`), `w2`, `w3` (`d x d`), bias `b` (`d`) and the
/// hybrid projection `w4` (`d x 2d`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReadoutParams {
    pub w1: ParamId,
    pub w2: ParamId,
    pub w3: ParamId,
    pub b: ParamId,
    pub w4: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct ReadoutVars {
    pub w1: Var,
    pub w2: Var,
    pub w3: Var,
    pub b: Var,
    pub w4: Var,
}

impl ReadoutParams {
    pub fn register(store: &mut ParamStore, d: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        let mut uniform = |shape: &[usize]| {
            let n = shape.iter().product();
            Array::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..bound)).collect()).expect("valid shape")
        };
        Self {
            w1: store.add("readout.w1", uniform(&[1, d])),
            w2: store.add("readout.w2", uniform(&[d, d])),
            w3: store.add("readout.w3", uniform(&[d, d])),
            b: store.add("readout.b", uniform(&[d])),
            w4: store.add("readout.w4", uniform(&[d, 2 * d])),
        }
    }

    pub fn ids(&self) -> [ParamId; 5] {
        [self.w1, self.w2, self.w3, self.b, self.w4]
    }

    pub fn on_tape(&self, tape: &mut Tape, store: &ParamStore) -> ReadoutVars {
        ReadoutVars {
            w1: tape.param(store, self.w1),
            w2: tape.param(store, self.w2),
            w3: tape.param(store, self.w3),
            b: tape.param(store, self.b),
            w4: tape.param(store, self.w4),
        }
    }
}

/// Final state of each session's last-clicked node; one row per session.
pub fn recent_interest(tape: &mut Tape, h: Var, last: &[usize]) -> Result<Var> {
    tape.gather_rows(h, Arc::new(last.to_vec()))
}

/// Attention weight of every node within its session, as an `n x 1` column.
pub fn attention_weights(
    tape: &mut Tape,
    h: Var,
    recent: Var,
    node_session: &Arc<Vec<usize>>,
    p: &ReadoutVars,
) -> Result<Var> {
    let sessions = tape.value(recent).rows();
    let node_term = tape.matmul_nt(h, p.w2)?;
    let session_term = tape.matmul_nt(recent, p.w3)?;
    let session_term = tape.gather_rows(session_term, Arc::clone(node_session))?;
    let pre = tape.add(node_term, session_term)?;
    let pre = tape.add_row(pre, p.b)?;
    let act = tape.sigmoid(pre);
    let scores = tape.matmul_nt(act, p.w1)?;
    tape.segment_softmax(scores, Arc::clone(node_session), sessions)
}

/// Attention-weighted sum of node states per session.
pub fn attention_longterm(
    tape: &mut Tape,
    h: Var,
    recent: Var,
    node_session: &Arc<Vec<usize>>,
    p: &ReadoutVars,
) -> Result<Var> {
    let sessions = tape.value(recent).rows();
    let gamma = attention_weights(tape, h, recent, node_session, p)?;
    let weighted = tape.mul_col(h, gamma)?;
    tape.scatter_add_rows(weighted, Arc::clone(node_session), sessions)
}

/// `[long ; recent] W4ᵀ`, one row per session.
pub fn hybrid(tape: &mut Tape, long: Var, recent: Var, w4: Var) -> Result<Var> {
    let joined = tape.concat(long, recent)?;
    tape.matmul_nt(joined, w4)
}

#[derive(Clone, Copy, Debug)]
pub struct Scores {
    /// Cosine similarity with every item, before scaling.
    pub logits: Var,
    /// `softmax(scale * logits)` per row.
    pub probs: Var,
}

/// Cosine scores against every row of `embeddings` followed by a scaled softmax.
///
/// A zero preference vector yields all-zero logits and a uniform distribution.
pub fn score_items(tape: &mut Tape, preference: Var, embeddings: Var, scale: f64) -> Result<Scores> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Config(format!("softmax scale must be positive, got {scale}")));
    }
    let p = tape.l2_normalize_rows(preference);
    let e = tape.l2_normalize_rows(embeddings);
    let logits = tape.matmul_nt(p, e)?;
    let scaled = tape.scale(logits, scale);
    let probs = tape.softmax_rows(scaled);
    Ok(Scores { logits, probs })
}

/// Binary cross-entropy over all items summed over the rows of `probs`.
pub fn bce_sum(tape: &mut Tape, probs: Var, targets: &[usize]) -> Result<Var> {
    let (rows, cols) = tape.value(probs).dims();
    if targets.len() != rows {
        return Err(Error::shape("bce_sum", format!("{rows} rows for {} targets", targets.len())));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= cols) {
        return Err(Error::Usage(format!("target {t} outside {cols} items")));
    }
    let mut onehot = Array::zeros(&[rows, cols]);
    for (r, &t) in targets.iter().enumerate() {
        onehot.row_mut(r)[t] = 1.0;
    }
    let complement = onehot.map(|y| 1.0 - y);
    let y = tape.constant(onehot);
    let not_y = tape.constant(complement);
    let log_p = tape.ln_clamped(probs, LOG_FLOOR);
    let one_minus = tape.affine(probs, -1.0, 1.0);
    let log_q = tape.ln_clamped(one_minus, LOG_FLOOR);
    let hit = tape.mul(y, log_p)?;
    let miss = tape.mul(not_y, log_q)?;
    let hit = tape.sum(hit);
    let miss = tape.sum(miss);
    tape.lincomb(&[(-1.0, hit), (-1.0, miss)])
}

/// Sum of squares of every entry of `params`.
pub fn l2_penalty(tape: &mut Tape, params: &[Var]) -> Result<Var> {
    let mut terms = Vec::with_capacity(params.len());
    for &p in params {
        let sq = tape.mul(p, p)?;
        terms.push((1.0, tape.sum(sq)));
    }
    if terms.is_empty() {
        return Ok(tape.constant(Array::scalar(0.0)));
    }
    tape.lincomb(&terms)
}

/// Mean per-sample cross-entropy plus `lambda` times the squared norm of `params`.
pub fn compute_loss(tape: &mut Tape, probs: Var, targets: &[usize], lambda: f64, params: &[Var]) -> Result<Var> {
    let bce = bce_sum(tape, probs, targets)?;
    let penalty = l2_penalty(tape, params)?;
    tape.lincomb(&[(1.0 / targets.len().max(1) as f64, bce), (lambda, penalty)])
}
