//! Explicit Euler, classical RK4 and the Dormand–Prince 5(4) pair with a PI
//! step-size controller, written against [`OdeSystem`] so the same code drives
//! plain arrays and tape variables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Array;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Euler,
    #[default]
    Rk4,
    Dopri5,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Euler => "euler",
            SolverKind::Rk4 => "rk4",
            SolverKind::Dopri5 => "dopri5",
        }
    }

    pub fn is_adaptive(self) -> bool {
        self == SolverKind::Dopri5
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "euler" => Ok(SolverKind::Euler),
            "rk4" => Ok(SolverKind::Rk4),
            "dopri5" => Ok(SolverKind::Dopri5),
            other => Err(Error::Config(format!("unknown solver {other:?} (euler, rk4, dopri5)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: SolverKind,
    /// Fixed-step solvers take this many steps per unit of time.
    pub steps_per_unit: usize,
    pub rtol: f64,
    pub atol: f64,
    /// Attempted (accepted or rejected) adaptive steps before giving up.
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kind: SolverKind::Rk4,
            steps_per_unit: 7,
            rtol: 1e-3,
            atol: 1e-4,
            max_steps: 1000,
        }
    }
}

impl SolverConfig {
    pub fn fixed(kind: SolverKind, steps_per_unit: usize) -> Self {
        Self {
            kind,
            steps_per_unit,
            ..Self::default()
        }
    }

    pub fn dopri5(rtol: f64, atol: f64) -> Self {
        Self {
            kind: SolverKind::Dopri5,
            rtol,
            atol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SolverKind::Euler | SolverKind::Rk4 if self.steps_per_unit == 0 => {
                Err(Error::Config("steps_per_unit must be positive".into()))
            }
            SolverKind::Dopri5 if !(self.rtol > 0.0 && self.atol > 0.0) => {
                Err(Error::Config("dopri5 tolerances must be positive".into()))
            }
            SolverKind::Dopri5 if self.max_steps == 0 => Err(Error::Config("max_steps must be positive".into())),
            _ => Ok(()),
        }
    }
}

/// A first-order system `dy/dt = f(t, y)`.
pub trait OdeSystem {
    type State: Clone;

    fn rhs(&mut self, t: f64, y: &Self::State) -> Result<Self::State>;

    /// The right-hand side with any time-switched structure held at its state
    /// at `frozen_at`. Systems without such structure ignore `frozen_at`.
    fn rhs_frozen(&mut self, t: f64, _frozen_at: f64, y: &Self::State) -> Result<Self::State> {
        self.rhs(t, y)
    }

    /// `sum_i c_i * s_i`.
    fn lincomb(&mut self, terms: &[(f64, &Self::State)]) -> Result<Self::State>;

    fn values<'a>(&'a self, y: &'a Self::State) -> &'a [f64];

    /// Times where the right-hand side may jump; adaptive integration never
    /// steps across them.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// A system given by a closure over plain arrays.
pub struct FnSystem<F> {
    f: F,
}

impl<F: FnMut(f64, &Array) -> Array> FnSystem<F> {
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F: FnMut(f64, &Array) -> Array> OdeSystem for FnSystem<F> {
    type State = Array;

    fn rhs(&mut self, t: f64, y: &Array) -> Result<Array> {
        Ok((self.f)(t, y))
    }

    fn lincomb(&mut self, terms: &[(f64, &Array)]) -> Result<Array> {
        let mut out = terms[0].1.map(|x| terms[0].0 * x);
        for &(c, s) in &terms[1..] {
            if s.shape() != out.shape() {
                return Err(Error::shape("lincomb", format!("{:?} vs {:?}", out.shape(), s.shape())));
            }
            for (o, x) in out.data_mut().iter_mut().zip(s.data()) {
                *o += c * x;
            }
        }
        Ok(out)
    }

    fn values<'a>(&'a self, y: &'a Array) -> &'a [f64] {
        y.data()
    }
}

#[derive(Clone, Debug)]
pub struct StepOutcome<S> {
    pub state: S,
    /// Local error estimate per element (embedded pairs only).
    pub error: Option<Vec<f64>>,
}

// Dormand–Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [&[f64]; 7] = [
    &[],
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order minus embedded fourth-order weights.
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const PI_BETA: f64 = 0.04;
const PI_ALPHA: f64 = 0.2 - 0.75 * PI_BETA;

fn eval<S: OdeSystem>(sys: &mut S, t: f64, frozen_at: Option<f64>, y: &S::State) -> Result<S::State> {
    match frozen_at {
        Some(f) => sys.rhs_frozen(t, f, y),
        None => sys.rhs(t, y),
    }
}

fn step_impl<S: OdeSystem>(
    kind: SolverKind,
    sys: &mut S,
    t: f64,
    y: &S::State,
    dt: f64,
    frozen_at: Option<f64>,
) -> Result<StepOutcome<S::State>> {
    match kind {
        SolverKind::Euler => {
            let k1 = eval(sys, t, frozen_at, y)?;
            let state = sys.lincomb(&[(1.0, y), (dt, &k1)])?;
            Ok(StepOutcome { state, error: None })
        }
        SolverKind::Rk4 => {
            let k1 = eval(sys, t, frozen_at, y)?;
            let y2 = sys.lincomb(&[(1.0, y), (dt / 2.0, &k1)])?;
            let k2 = eval(sys, t + dt / 2.0, frozen_at, &y2)?;
            let y3 = sys.lincomb(&[(1.0, y), (dt / 2.0, &k2)])?;
            let k3 = eval(sys, t + dt / 2.0, frozen_at, &y3)?;
            let y4 = sys.lincomb(&[(1.0, y), (dt, &k3)])?;
            let k4 = eval(sys, t + dt, frozen_at, &y4)?;
            let state = sys.lincomb(&[
                (1.0, y),
                (dt / 6.0, &k1),
                (dt / 3.0, &k2),
                (dt / 3.0, &k3),
                (dt / 6.0, &k4),
            ])?;
            Ok(StepOutcome { state, error: None })
        }
        SolverKind::Dopri5 => {
            let mut ks: Vec<S::State> = Vec::with_capacity(7);
            ks.push(eval(sys, t, frozen_at, y)?);
            let mut state = y.clone();
            for stage in 1..7 {
                let mut terms: Vec<(f64, &S::State)> = vec![(1.0, y)];
                terms.extend(DP_A[stage].iter().zip(&ks).filter(|(a, _)| **a != 0.0).map(|(a, k)| (dt * a, k)));
                state = sys.lincomb(&terms)?;
                ks.push(eval(sys, t + DP_C[stage] * dt, frozen_at, &state)?);
            }
            let n = sys.values(y).len();
            let mut error = vec![0.0; n];
            for (e, k) in DP_E.iter().zip(&ks) {
                if *e == 0.0 {
                    continue;
                }
                for (acc, v) in error.iter_mut().zip(sys.values(k)) {
                    *acc += dt * e * v;
                }
            }
            Ok(StepOutcome {
                state,
                error: Some(error),
            })
        }
    }
}

/// One step of `kind` from `(t, y)` with step size `dt`.
pub fn step<S: OdeSystem>(kind: SolverKind, sys: &mut S, t: f64, y: &S::State, dt: f64) -> Result<StepOutcome<S::State>> {
    if !(dt > 0.0) {
        return Err(Error::Usage(format!("step size must be positive, got {dt}")));
    }
    step_impl(kind, sys, t, y, dt, None)
}

/// Root-mean-square of `error_i / (atol + rtol * max(|y0_i|, |y1_i|))`.
pub fn error_norm(error: &[f64], y0: &[f64], y1: &[f64], rtol: f64, atol: f64) -> f64 {
    if error.is_empty() {
        return 0.0;
    }
    let sum: f64 = error
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / error.len() as f64).sqrt()
}

/// Step-size multiplier after a step with scaled error `err`.
///
/// `prev_err` is the scaled error of the last accepted step.
pub fn pi_factor(err: f64, prev_err: f64) -> f64 {
    if err <= 1.0 {
        let fac = SAFETY * err.powf(-PI_ALPHA) * prev_err.powf(PI_BETA);
        if fac.is_nan() {
            MAX_FACTOR
        } else {
            fac.clamp(MIN_FACTOR, MAX_FACTOR)
        }
    } else {
        (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, 1.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub accepted: usize,
    pub rejected: usize,
}

#[derive(Clone, Debug)]
pub struct Solution<S> {
    pub state: S,
    pub stats: SolveStats,
}

/// Integrates from `t0` to `t1`.
///
/// Fixed-step kinds use `round(steps_per_unit * (t1 - t0))` (at least one)
/// equal steps on the grid `t0 + (t1 - t0) * i / n`. Dopri5 stops at every
/// breakpoint reported by the system and evaluates each step with the
/// structure frozen at the start of its segment.
pub fn integrate<S: OdeSystem>(sys: &mut S, y0: &S::State, t0: f64, t1: f64, cfg: &SolverConfig) -> Result<Solution<S::State>> {
    cfg.validate()?;
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(Solution {
            state: y0.clone(),
            stats: SolveStats::default(),
        });
    }
    if !(span > 0.0) {
        return Err(Error::Usage(format!("integration span [{t0}, {t1}] runs backwards")));
    }
    match cfg.kind {
        SolverKind::Euler | SolverKind::Rk4 => {
            let n = ((cfg.steps_per_unit as f64 * span).round() as usize).max(1);
            let mut y = y0.clone();
            for i in 0..n {
                let ta = t0 + span * i as f64 / n as f64;
                let tb = t0 + span * (i + 1) as f64 / n as f64;
                y = step_impl(cfg.kind, sys, ta, &y, tb - ta, None)?.state;
            }
            Ok(Solution {
                state: y,
                stats: SolveStats {
                    accepted: n,
                    rejected: 0,
                },
            })
        }
        SolverKind::Dopri5 => integrate_adaptive(sys, y0, t0, t1, cfg),
    }
}

fn initial_step<S: OdeSystem>(sys: &mut S, y0: &S::State, t0: f64, span: f64, cfg: &SolverConfig) -> Result<f64> {
    let f0 = sys.rhs_frozen(t0, t0, y0)?;
    let (d0, d1) = {
        let y = sys.values(y0);
        let f = sys.values(&f0);
        let sc: Vec<f64> = y.iter().map(|v| cfg.atol + cfg.rtol * v.abs()).collect();
        let rms = |xs: &[f64]| {
            (xs.iter().zip(&sc).map(|(x, s)| (x / s).powi(2)).sum::<f64>() / xs.len().max(1) as f64).sqrt()
        };
        (rms(y), rms(f))
    };
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1 = sys.lincomb(&[(1.0, y0), (h0, &f0)])?;
    let f1 = sys.rhs_frozen(t0 + h0, t0, &y1)?;
    let d2 = {
        let y = sys.values(y0);
        let a = sys.values(&f0);
        let b = sys.values(&f1);
        let sum: f64 = a
            .iter()
            .zip(b)
            .zip(y)
            .map(|((a, b), y)| ((b - a) / (cfg.atol + cfg.rtol * y.abs())).powi(2))
            .sum();
        (sum / a.len().max(1) as f64).sqrt() / h0
    };
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(span))
}

fn integrate_adaptive<S: OdeSystem>(sys: &mut S, y0: &S::State, t0: f64, t1: f64, cfg: &SolverConfig) -> Result<Solution<S::State>> {
    let mut stops: Vec<f64> = sys.breakpoints().into_iter().filter(|&b| b > t0 && b < t1).collect();
    stops.sort_by(f64::total_cmp);
    stops.dedup();
    stops.push(t1);

    let span = t1 - t0;
    let mut h = initial_step(sys, y0, t0, span, cfg)?;
    let mut y = y0.clone();
    let mut t = t0;
    let mut prev_err = 1e-4;
    let mut stats = SolveStats::default();
    let mut last_rejected = false;

    for &stop in &stops {
        let segment_start = t;
        while t < stop {
            if stats.accepted + stats.rejected >= cfg.max_steps {
                return Err(Error::Integration {
                    t,
                    reason: format!("exceeded max_steps={}", cfg.max_steps),
                });
            }
            let remaining = stop - t;
            // Avoid leaving a sliver of the segment for a final tiny step.
            let dt = if h >= remaining || remaining - h < 1e-12 * span { remaining } else { h };
            let out = step_impl(SolverKind::Dopri5, sys, t, &y, dt, Some(segment_start))?;
            let error = out.error.as_deref().expect("dopri5 reports an error estimate");
            let err = error_norm(error, sys.values(&y), sys.values(&out.state), cfg.rtol, cfg.atol);
            if !err.is_finite() || !sys.values(&out.state).iter().all(|v| v.is_finite()) {
                return Err(Error::Integration {
                    t,
                    reason: "non-finite state or error estimate".into(),
                });
            }
            if err <= 1.0 {
                t = if dt == remaining { stop } else { t + dt };
                y = out.state;
                stats.accepted += 1;
                let mut fac = pi_factor(err, prev_err);
                if last_rejected {
                    fac = fac.min(1.0);
                }
                prev_err = err.max(1e-4);
                last_rejected = false;
                h = dt * fac;
            } else {
                stats.rejected += 1;
                last_rejected = true;
                h = dt * pi_factor(err, prev_err);
            }
        }
    }
    Ok(Solution { state: y, stats })
}
