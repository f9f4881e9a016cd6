//! Filtering, vocabulary construction and the chronological train/validation
//! split, plus the on-disk layout shared by the command-line tools.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::session::{
    parse_sessions, preprocess, read_vocabulary, samples_from_raw, split_chronological, write_sessions,
    write_vocabulary, RawClick, RawSession, Sample, Vocabulary,
};

pub const VOCAB_FILE: &str = "vocab.csv";
pub const TRAIN_FILE: &str = "train.csv";
pub const VALID_FILE: &str = "valid.csv";
pub const VALID_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub vocabulary: Vocabulary,
    pub train: Vec<RawSession>,
    pub valid: Vec<RawSession>,
    /// Distinct items removed for being too rare.
    pub filtered_items: usize,
    /// Sessions removed for being too short after filtering.
    pub dropped_sessions: usize,
}

pub fn prepare(raw: &[RawSession], min_session_len: usize, min_item_freq: usize) -> Result<Prepared> {
    let (vocabulary, sessions) = preprocess(raw, min_session_len, min_item_freq)?;
    let distinct: std::collections::BTreeSet<&str> =
        raw.iter().flat_map(|s| s.clicks.iter().map(|c| c.item.as_str())).collect();
    let kept: Vec<RawSession> = sessions
        .iter()
        .map(|s| RawSession {
            id: s.id.clone(),
            clicks: s
                .clicks
                .iter()
                .map(|c| RawClick {
                    item: vocabulary.key(c.item).to_string(),
                    time: c.time,
                })
                .collect(),
        })
        .collect();
    let (train, valid) = split_chronological(&kept, |s| s.clicks[0].time, VALID_FRACTION);
    Ok(Prepared {
        filtered_items: distinct.len() - vocabulary.len(),
        dropped_sessions: raw.len() - kept.len(),
        vocabulary,
        train,
        valid,
    })
}

pub fn write_prepared(prepared: &Prepared, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_vocabulary(BufWriter::new(File::create(dir.join(VOCAB_FILE))?), &prepared.vocabulary)?;
    write_sessions(BufWriter::new(File::create(dir.join(TRAIN_FILE))?), &prepared.train)?;
    write_sessions(BufWriter::new(File::create(dir.join(VALID_FILE))?), &prepared.valid)?;
    Ok(())
}

/// Samples of one session file mapped through `vocabulary`.
#[derive(Clone, Debug)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
    pub skipped: usize,
}

pub fn load_vocabulary(dir: impl AsRef<Path>) -> Result<Vocabulary> {
    let path = dir.as_ref().join(VOCAB_FILE);
    let file = File::open(&path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    read_vocabulary(file)
}

pub fn load_samples(path: impl AsRef<Path>, vocabulary: &Vocabulary) -> Result<SampleSet> {
    let path = path.as_ref();
    let raw = parse_sessions(path)?;
    let (samples, skipped) = samples_from_raw(&raw, vocabulary);
    Ok(SampleSet { samples, skipped })
}
