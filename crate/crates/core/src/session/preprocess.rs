use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::session::{Click, RawSession, Sample, Session, Vocabulary};

/// Drops items seen fewer than `min_item_freq` times in the whole corpus, then
/// sessions left with fewer than `min_len` clicks. Indices are assigned in
/// order of first appearance among the survivors.
pub fn preprocess(sessions: &[RawSession], min_len: usize, min_item_freq: usize) -> Result<(Vocabulary, Vec<Session>)> {
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for s in sessions {
        for c in &s.clicks {
            *freq.entry(c.item.as_str()).or_default() += 1;
        }
    }

    let mut vocab = Vocabulary::new();
    let mut out = Vec::new();
    for s in sessions {
        let kept: Vec<_> = s.clicks.iter().filter(|c| freq[c.item.as_str()] >= min_item_freq).collect();
        if kept.len() < min_len.max(1) {
            continue;
        }
        let clicks = kept
            .into_iter()
            .map(|c| Click {
                item: vocab.intern(&c.item),
                time: c.time,
            })
            .collect();
        out.push(Session {
            id: s.id.clone(),
            clicks,
        });
    }
    if out.is_empty() {
        return Err(Error::Dataset(format!(
            "no session survives filtering (min_len={min_len}, min_item_freq={min_item_freq})"
        )));
    }
    Ok((vocab, out))
}

/// `[v1..vn]` becomes `([v1], v2), ([v1, v2], v3), ..., ([v1..v(n-1)], vn)`.
pub fn augment(session: &Session) -> Result<Vec<Sample>> {
    let n = session.len();
    if n < 2 {
        return Err(Error::Usage(format!(
            "session {:?} has {n} click(s); prefix augmentation needs at least 2",
            session.id
        )));
    }
    Ok((1..n)
        .map(|t| Sample {
            prefix: Session {
                id: session.id.clone(),
                clicks: session.clicks[..t].to_vec(),
            },
            target: session.clicks[t].item,
        })
        .collect())
}

/// Maps raw sessions through a fixed vocabulary and augments them. Samples
/// touching an unknown key are skipped; the second value counts them.
pub fn samples_from_raw(sessions: &[RawSession], vocab: &Vocabulary) -> (Vec<Sample>, usize) {
    let mut samples = Vec::new();
    let mut skipped = 0;
    for s in sessions {
        let items: Vec<Option<usize>> = s.clicks.iter().map(|c| vocab.index_of(&c.item)).collect();
        for t in 1..s.clicks.len() {
            let (Some(target), true) = (items[t], items[..t].iter().all(Option::is_some)) else {
                skipped += 1;
                continue;
            };
            let clicks = s.clicks[..t]
                .iter()
                .zip(&items)
                .map(|(c, i)| Click {
                    item: i.expect("checked above"),
                    time: c.time,
                })
                .collect();
            samples.push(Sample {
                prefix: Session {
                    id: s.id.clone(),
                    clicks,
                },
                target,
            });
        }
    }
    (samples, skipped)
}

/// Orders sessions by start time (stable) and splits off the last `fraction`
/// as the held-out part.
pub fn split_chronological<T: Clone>(sessions: &[T], start: impl Fn(&T) -> f64, fraction: f64) -> (Vec<T>, Vec<T>) {
    let mut ordered: Vec<T> = sessions.to_vec();
    ordered.sort_by(|a, b| start(a).total_cmp(&start(b)));
    let held_out = ((ordered.len() as f64) * fraction).round() as usize;
    let tail = ordered.split_off(ordered.len() - held_out.min(ordered.len()));
    (ordered, tail)
}
