use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::session::Sample;

/// Prefixes scored per tape during evaluation.
pub const EVAL_CHUNK: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub cutoffs: Vec<usize>,
    pub hit_rate: Vec<f64>,
    pub mrr: Vec<f64>,
    pub samples: usize,
    /// Samples dropped because they mention items outside the vocabulary.
    pub skipped: usize,
}

impl EvalReport {
    pub fn from_ranks(ranks: &[usize], cutoffs: &[usize], skipped: usize) -> Self {
        let n = ranks.len().max(1) as f64;
        let hit_rate = cutoffs
            .iter()
            .map(|&k| ranks.iter().filter(|&&r| r <= k).count() as f64 / n)
            .collect();
        let mrr = cutoffs
            .iter()
            .map(|&k| ranks.iter().filter(|&&r| r <= k).map(|&r| 1.0 / r as f64).sum::<f64>() / n)
            .collect();
        Self {
            cutoffs: cutoffs.to_vec(),
            hit_rate,
            mrr,
            samples: ranks.len(),
            skipped,
        }
    }

    pub fn hr(&self, k: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == k).map(|i| self.hit_rate[i])
    }

    pub fn mrr_at(&self, k: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == k).map(|i| self.mrr[i])
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, k) in self.cutoffs.iter().enumerate() {
            writeln!(f, "HR@{k}={:.6}", self.hit_rate[i])?;
        }
        for (i, k) in self.cutoffs.iter().enumerate() {
            writeln!(f, "MRR@{k}={:.6}", self.mrr[i])?;
        }
        writeln!(f, "samples={}", self.samples)?;
        writeln!(f, "skipped={}", self.skipped)
    }
}

/// 1-based rank of `target`; equal scores are ordered by ascending item index.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < target))
        .count()
}

/// Item indices ordered by descending score, ties by ascending index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Rank of every sample's target under `model`, in sample order.
pub fn ranks(model: &Model, samples: &[Sample]) -> Result<Vec<usize>> {
    let chunks: Vec<Vec<usize>> = samples
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let prefixes: Vec<_> = chunk.iter().map(|s| &s.prefix).collect();
            let probs = model.predict(&prefixes)?;
            Ok(chunk
                .iter()
                .enumerate()
                .map(|(i, s)| rank_of(probs.row(i), s.target))
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

pub fn evaluate(model: &Model, samples: &[Sample], cutoffs: &[usize], skipped: usize) -> Result<EvalReport> {
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(Error::Config("cutoffs must be positive".into()));
    }
    if samples.is_empty() {
        return Err(Error::Dataset("no evaluation samples".into()));
    }
    Ok(EvalReport::from_ranks(&ranks(model, samples)?, cutoffs, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_to_lower_index() {
        let s = [0.2, 0.5, 0.5, 0.1];
        assert_eq!(rank_of(&s, 1), 1);
        assert_eq!(rank_of(&s, 2), 2);
        assert_eq!(rank_of(&s, 0), 3);
        assert_eq!(top_k(&s, 4), vec![1, 2, 0, 3]);
    }

    #[test]
    fn perfect_ranks() {
        let r = EvalReport::from_ranks(&[1, 1, 1], &[1, 10], 0);
        assert_eq!(r.hit_rate, vec![1.0, 1.0]);
        assert_eq!(r.mrr, vec![1.0, 1.0]);
    }

    #[test]
    fn rank_beyond_cutoff_counts_zero() {
        let r = EvalReport::from_ranks(&[11], &[10], 0);
        assert_eq!((r.hit_rate[0], r.mrr[0]), (0.0, 0.0));
    }

    #[test]
    fn mixed_ranks() {
        let r = EvalReport::from_ranks(&[1, 4], &[10], 2);
        assert_eq!(r.hr(10), Some(1.0));
        assert_eq!(r.mrr_at(10), Some(0.625));
        assert_eq!(r.to_string(), "HR@10=1.000000\nMRR@10=0.625000\nsamples=2\nskipped=2\n");
    }
}
