//! Click logs, vocabulary, prefix samples and the session graphs built from them.

mod graph;
mod io;
mod preprocess;

use std::collections::HashMap;

pub use graph::{make_batch, BatchGraph, StaticSessionGraph, TemporalEdge, TemporalSessionGraph};
pub use io::{parse_sessions, read_sessions, read_vocabulary, write_sessions, write_vocabulary};
pub use preprocess::{augment, preprocess, samples_from_raw, split_chronological};

/// A click whose item is still a raw key from the input file.
#[derive(Clone, Debug, PartialEq)]
pub struct RawClick {
    pub item: String,
    pub time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawSession {
    pub id: String,
    pub clicks: Vec<RawClick>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Click {
    /// Vocabulary index.
    pub item: usize,
    /// Seconds, non-negative.
    pub time: f64,
}

/// Timestamp-ordered clicks of one anonymous session.
#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub id: String,
    pub clicks: Vec<Click>,
}

impl Session {
    pub fn len(&self) -> usize {
        self.clicks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clicks.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = usize> + '_ {
        self.clicks.iter().map(|c| c.item)
    }

    pub fn start_time(&self) -> f64 {
        self.clicks.first().map_or(0.0, |c| c.time)
    }
}

/// One training or evaluation example: a session prefix and the item clicked next.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub prefix: Session,
    pub target: usize,
}

/// Bijection between raw item keys and dense indices `0..len`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    keys: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of `key`, inserting it at the end if unseen.
    pub fn intern(&mut self, key: &str) -> usize {
        if let Some(&i) = self.index.get(key) {
            return i;
        }
        self.keys.push(key.to_owned());
        self.index.insert(key.to_owned(), self.keys.len() - 1);
        self.keys.len() - 1
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn key(&self, index: usize) -> &str {
        &self.keys[index]
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn from_keys(keys: Vec<String>) -> crate::Result<Self> {
        let mut vocab = Self::new();
        for k in &keys {
            if vocab.index.contains_key(k) {
                return Err(crate::Error::Dataset(format!("duplicate vocabulary key {k:?}")));
            }
            vocab.intern(k);
        }
        Ok(vocab)
    }
}
