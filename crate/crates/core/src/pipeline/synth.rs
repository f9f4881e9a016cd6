//! Synthetic click logs with a known next-item rule.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::session::{RawClick, RawSession};

/// Mean gap between clicks within a session, in seconds.
pub const MEAN_GAP: f64 = 60.0;
/// Mean gap between session starts, in seconds.
pub const MEAN_SESSION_GAP: f64 = 3600.0;
/// Successors per item under the Markov rule.
pub const MARKOV_SUPPORT: usize = 3;
pub const MIN_LEN: usize = 4;
pub const MAX_LEN: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    /// The successor of item `v` is `v + 1 mod |V|`.
    Cycle,
    /// Successors drawn from a seeded random row-stochastic matrix.
    Markov,
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cycle" => Ok(Rule::Cycle),
            "markov" => Ok(Rule::Markov),
            _ => Err(Error::Usage(format!("unknown rule {s:?}; expected cycle or markov"))),
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Cycle => "cycle",
            Rule::Markov => "markov",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_items: usize,
    pub num_sessions: usize,
    pub rule: Rule,
    /// Probability that a successor is replaced by a uniform random item.
    pub noise: f64,
    pub seed: u64,
}

/// Sparse transition table: each row lists `(successor, cumulative probability)`.
fn markov_table(num_items: usize, rng: &mut impl Rng) -> Vec<Vec<(usize, f64)>> {
    let support = MARKOV_SUPPORT.min(num_items);
    (0..num_items)
        .map(|_| {
            let succ = sample(rng, num_items, support).into_vec();
            let weights: Vec<f64> = (0..support).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = weights.iter().sum();
            let mut acc = 0.0;
            succ.into_iter()
                .zip(weights)
                .map(|(s, w)| {
                    acc += w / total;
                    (s, acc)
                })
                .collect()
        })
        .collect()
}

fn round_millis(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<RawSession>> {
    if cfg.num_items == 0 || cfg.num_sessions == 0 {
        return Err(Error::Usage("num_items and num_sessions must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.noise) {
        return Err(Error::Usage(format!("noise must lie in [0, 1), got {}", cfg.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let table = match cfg.rule {
        Rule::Markov => markov_table(cfg.num_items, &mut rng),
        Rule::Cycle => Vec::new(),
    };
    let click_gap = Exp::new(1.0 / MEAN_GAP).expect("positive rate");
    let session_gap = Exp::new(1.0 / MEAN_SESSION_GAP).expect("positive rate");

    let mut start = 0.0;
    let mut sessions = Vec::with_capacity(cfg.num_sessions);
    for s in 0..cfg.num_sessions {
        start += session_gap.sample(&mut rng);
        let len = rng.random_range(MIN_LEN..=MAX_LEN);
        let mut item = rng.random_range(0..cfg.num_items);
        let mut time = start;
        let mut clicks = Vec::with_capacity(len);
        for i in 0..len {
            if i > 0 {
                time += click_gap.sample(&mut rng);
                item = if rng.random::<f64>() < cfg.noise {
                    rng.random_range(0..cfg.num_items)
                } else {
                    match cfg.rule {
                        Rule::Cycle => (item + 1) % cfg.num_items,
                        Rule::Markov => {
                            let u: f64 = rng.random();
                            let row = &table[item];
                            row.iter().find(|&&(_, c)| u < c).unwrap_or(&row[row.len() - 1]).0
                        }
                    }
                };
            }
            clicks.push(RawClick {
                item: item.to_string(),
                time: round_millis(time),
            });
        }
        sessions.push(RawSession {
            id: format!("s{s}"),
            clicks,
        });
    }
    Ok(sessions)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(rule: Rule, noise: f64) -> SynthConfig {
        SynthConfig {
            num_items: 20,
            num_sessions: 200,
            rule,
            noise,
            seed: 5,
        }
    }

    #[test]
    fn noiseless_cycle_follows_rule() {
        let sessions = generate_synthetic(&cfg(Rule::Cycle, 0.0)).unwrap();
        for s in &sessions {
            assert!((MIN_LEN..=MAX_LEN).contains(&s.clicks.len()));
            for w in s.clicks.windows(2) {
                let (a, b): (usize, usize) = (w[0].item.parse().unwrap(), w[1].item.parse().unwrap());
                assert_eq!(b, (a + 1) % 20);
                assert!(w[1].time >= w[0].time);
            }
        }
    }

    #[test]
    fn sessions_start_in_order() {
        let sessions = generate_synthetic(&cfg(Rule::Markov, 0.1)).unwrap();
        for w in sessions.windows(2) {
            assert!(w[0].clicks[0].time <= w[1].clicks[0].time);
        }
    }

    #[test]
    fn markov_successors_stay_in_support() {
        let sessions = generate_synthetic(&cfg(Rule::Markov, 0.0)).unwrap();
        let mut succ: std::collections::BTreeMap<&str, std::collections::BTreeSet<&str>> = Default::default();
        for s in &sessions {
            for w in s.clicks.windows(2) {
                succ.entry(&w[0].item).or_default().insert(&w[1].item);
            }
        }
        assert!(succ.values().all(|v| v.len() <= MARKOV_SUPPORT));
    }

    #[test]
    fn seeded_output_repeats() {
        assert_eq!(
            generate_synthetic(&cfg(Rule::Markov, 0.2)).unwrap(),
            generate_synthetic(&cfg(Rule::Markov, 0.2)).unwrap()
        );
    }

    #[test]
    fn full_noise_is_rejected() {
        assert!(generate_synthetic(&cfg(Rule::Cycle, 1.0)).is_err());
        assert!(generate_synthetic(&cfg(Rule::Cycle, -0.1)).is_err());
    }
}
