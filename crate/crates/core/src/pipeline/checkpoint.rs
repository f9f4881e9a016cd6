//! Single-file model snapshot: a text header with vocabulary and config, then
//! the parameter arrays as little-endian binary.
//!
//! ```text
//! gngode-checkpoint
//! version 1
//! vocabulary <n>
//! <key>            (n lines)
//! config <json>
//! params <count> <bytes>
//! <binary>
//! ```
//!
//! Each binary record is `u32 name length`, name bytes, `u32 ndim`, `u64` per
//! dimension, then the `f64` values.

use std::fs;
use std::io::{BufRead, Cursor, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numeric::Array;
use crate::session::Vocabulary;

use super::config::TrainConfig;

pub const MAGIC: &str = "gngode-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub vocabulary: Vocabulary,
    pub config: TrainConfig,
    pub params: Vec<(String, Array)>,
}

impl Checkpoint {
    pub fn new(model: &Model, vocabulary: Vocabulary, config: TrainConfig) -> Self {
        Self {
            version: FORMAT_VERSION,
            vocabulary,
            config,
            params: model.store.iter().map(|(_, n, a)| (n.to_string(), a.clone())).collect(),
        }
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_arrays(self.config.model_config(), self.vocabulary.len(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(format!("{MAGIC}\nversion {}\nvocabulary {}\n", self.version, self.vocabulary.len()).as_bytes());
        for key in self.vocabulary.keys() {
            out.extend_from_slice(key.as_bytes());
            out.push(b'\n');
        }
        out.extend_from_slice(format!("config {}\n", self.config.to_json()).as_bytes());

        let mut body = Vec::new();
        for (name, a) in &self.params {
            body.extend_from_slice(&(name.len() as u32).to_le_bytes());
            body.extend_from_slice(name.as_bytes());
            body.extend_from_slice(&(a.shape().len() as u32).to_le_bytes());
            for &dim in a.shape() {
                body.extend_from_slice(&(dim as u64).to_le_bytes());
            }
            for &v in a.data() {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(format!("params {} {}\n", self.params.len(), body.len()).as_bytes());
        out.extend_from_slice(&body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let magic = header_line(&mut cur)?;
        if magic != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let version: u32 = field(&header_line(&mut cur)?, "version")?;
        if version != FORMAT_VERSION {
            return Err(Error::IncompatibleVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let n: usize = field(&header_line(&mut cur)?, "vocabulary")?;
        let keys = (0..n).map(|_| header_line(&mut cur)).collect::<Result<Vec<_>>>()?;
        let vocabulary = Vocabulary::from_keys(keys).map_err(|e| corrupt(&e.to_string()))?;
        let line = header_line(&mut cur)?;
        let json = line.strip_prefix("config ").ok_or_else(|| corrupt("missing config line"))?;
        let config: TrainConfig = serde_json::from_str(json).map_err(|e| corrupt(&format!("config: {e}")))?;
        let line = header_line(&mut cur)?;
        let counts: Vec<usize> = line
            .strip_prefix("params ")
            .ok_or_else(|| corrupt("missing params line"))?
            .split(' ')
            .map(|t| t.parse().map_err(|_| corrupt("bad params line")))
            .collect::<Result<_>>()?;
        let [count, len] = counts[..] else {
            return Err(corrupt("bad params line"));
        };
        let start = cur.position() as usize;
        if bytes.len() - start != len {
            return Err(corrupt(&format!(
                "expected {len} bytes of parameters, found {}",
                bytes.len() - start
            )));
        }
        let mut body = Cursor::new(&bytes[start..]);
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut body)? as usize;
            let name = String::from_utf8(take(&mut body, name_len)?).map_err(|_| corrupt("parameter name"))?;
            let ndim = read_u32(&mut body)? as usize;
            let shape = (0..ndim).map(|_| read_u64(&mut body).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let size = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| corrupt("shape"))?;
            let raw = take(&mut body, size.checked_mul(8).ok_or_else(|| corrupt("shape"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let array = Array::new(shape, data).map_err(|e| corrupt(&e.to_string()))?;
            params.push((name, array));
        }
        if body.position() as usize != len {
            return Err(corrupt("trailing bytes after parameters"));
        }
        Ok(Self {
            version,
            vocabulary,
            config,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn corrupt(reason: &str) -> Error {
    Error::CorruptCheckpoint(reason.to_string())
}

fn header_line(cur: &mut Cursor<&[u8]>) -> Result<String> {
    let mut buf = Vec::new();
    cur.read_until(b'\n', &mut buf)?;
    if buf.pop() != Some(b'\n') {
        return Err(corrupt("truncated header"));
    }
    String::from_utf8(buf).map_err(|_| corrupt("header is not UTF-8"))
}

fn field<T: std::str::FromStr>(line: &str, name: &str) -> Result<T> {
    line.strip_prefix(name)
        .and_then(|rest| rest.strip_prefix(' '))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| corrupt(&format!("expected `{name} <value>`, found {line:?}")))
}

fn take(cur: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0; n];
    cur.read_exact(&mut buf).map_err(|_| corrupt("truncated parameters"))?;
    Ok(buf)
}

fn read_u32(cur: &mut Cursor<&[u8]>) -> Result<u32> {
    Ok(u32::from_le_bytes(take(cur, 4)?.try_into().expect("4 bytes")))
}

fn read_u64(cur: &mut Cursor<&[u8]>) -> Result<u64> {
    Ok(u64::from_le_bytes(take(cur, 8)?.try_into().expect("8 bytes")))
}
