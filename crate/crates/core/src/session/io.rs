use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::session::{RawClick, RawSession, Vocabulary};

/// Reads `session_id,item_key,timestamp_seconds` lines from `path`.
pub fn parse_sessions(path: impl AsRef<Path>) -> Result<Vec<RawSession>> {
    let file = fs::File::open(path.as_ref())?;
    read_sessions(BufReader::new(file))
}

/// Groups clicks by session id in order of first appearance and sorts each
/// session by timestamp (stable on ties). A first line whose timestamp field
/// is not numeric is taken as a header.
pub fn read_sessions(reader: impl Read) -> Result<Vec<RawSession>> {
    let mut sessions: Vec<RawSession> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    let mut seen_data = false;

    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: lineno,
                reason: format!("expected 3 comma-separated fields, found {}", fields.len()),
            });
        }
        let time = match fields[2].parse::<f64>() {
            Ok(t) if t.is_finite() => t,
            Ok(_) | Err(_) if !seen_data => {
                seen_data = true;
                continue;
            }
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    reason: format!("timestamp {:?} is not a finite number", fields[2]),
                })
            }
        };
        seen_data = true;
        if time < 0.0 {
            return Err(Error::Validation {
                line: lineno,
                reason: format!("negative timestamp {time}"),
            });
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                line: lineno,
                reason: "empty session id or item key".into(),
            });
        }
        let idx = *by_id.entry(fields[0].to_owned()).or_insert_with(|| {
            sessions.push(RawSession {
                id: fields[0].to_owned(),
                clicks: Vec::new(),
            });
            sessions.len() - 1
        });
        sessions[idx].clicks.push(RawClick {
            item: fields[1].to_owned(),
            time,
        });
    }

    for s in &mut sessions {
        s.clicks.sort_by(|a, b| a.time.total_cmp(&b.time));
    }
    Ok(sessions)
}

pub fn write_sessions(mut out: impl Write, sessions: &[RawSession]) -> Result<()> {
    for s in sessions {
        for c in &s.clicks {
            writeln!(out, "{},{},{}", s.id, c.item, c.time)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_vocabulary(mut out: impl Write, vocab: &Vocabulary) -> Result<()> {
    for (i, k) in vocab.keys().iter().enumerate() {
        writeln!(out, "{k},{i}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads `item_key,index` lines; indices must be exactly `0..n` in order.
pub fn read_vocabulary(reader: impl Read) -> Result<Vocabulary> {
    let mut keys = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, idx) = line.rsplit_once(',').ok_or_else(|| Error::Parse {
            line: i + 1,
            reason: "expected item_key,index".into(),
        })?;
        let idx: usize = idx.trim().parse().map_err(|_| Error::Parse {
            line: i + 1,
            reason: format!("bad index {idx:?}"),
        })?;
        if idx != keys.len() {
            return Err(Error::Parse {
                line: i + 1,
                reason: format!("index {idx} out of sequence, expected {}", keys.len()),
            });
        }
        keys.push(key.to_owned());
    }
    Vocabulary::from_keys(keys)
}
