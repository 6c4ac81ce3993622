//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//! magic `RSNT`, u32 format version, u32 metadata length, metadata JSON
//! (config plus vocabulary), then one record per parameter until EOF:
//! u32 name length, UTF-8 name, u32 rank, u32 dims, f32 payload.
//! A checkpoint is self-contained: loading needs no side files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::write_atomic;
use crate::model::{ConfigError, Model, ModelConfig};
use crate::tensor::TensorData;
use crate::vocab::{Vocab, VocabError, VocabFile};

pub const MAGIC: [u8; 4] = *b"RSNT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub vocab: VocabFile,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: bad magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint metadata: {0}")]
    Meta(#[from] serde_json::Error),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("checkpoint ends mid-record")]
    Truncated,
    #[error("parameter name is not UTF-8")]
    BadName,
    #[error("parameter {name}: shape {found:?} does not match configured {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("checkpoint lacks parameter {0}")]
    MissingParam(String),
    #[error("checkpoint carries unknown parameter {0}")]
    UnexpectedParam(String),
    #[error("checkpoint repeats parameter {0}")]
    DuplicateParam(String),
    #[error("model expects {model} vocabulary entries, vocabulary has {vocab}")]
    VocabSizeMismatch { model: usize, vocab: usize },
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let slice = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(CheckpointError::Truncated),
        }
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Serializes a model and its vocabulary into checkpoint bytes.
pub fn to_bytes(model: &Model<f32>, vocab: &Vocab) -> Result<Vec<u8>, CheckpointError> {
    if model.vocab_size != vocab.len() {
        return Err(CheckpointError::VocabSizeMismatch {
            model: model.vocab_size,
            vocab: vocab.len(),
        });
    }
    let meta = CheckpointMeta { config: model.config.clone(), vocab: vocab.to_file() };
    let meta_json = serde_json::to_vec(&meta)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    put_u32(&mut buf, meta_json.len() as u32);
    buf.extend_from_slice(&meta_json);
    for (name, tensor) in model.params.named() {
        put_u32(&mut buf, name.len() as u32);
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, tensor.shape().len() as u32);
        for &dim in tensor.shape() {
            put_u32(&mut buf, dim as u32);
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

/// Reconstructs a model and vocabulary from checkpoint bytes.
pub fn from_bytes(bytes: &[u8]) -> Result<(Model<f32>, Vocab), CheckpointError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let meta_len = cur.u32()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(cur.take(meta_len)?)?;
    let vocab = Vocab::from_file(meta.vocab)?;
    // Seeded skeleton fixes shapes and canonical names; every value is
    // overwritten below or the load fails.
    let mut model = Model::<f32>::init(meta.config, vocab.len(), 0)?;
    let mut assigned = vec![false; model.params.named().len()];
    while !cur.done() {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| CheckpointError::BadName)?
            .to_string();
        let rank = cur.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32()? as usize);
        }
        let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(CheckpointError::Truncated)?;
        let payload = cur.take(len.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        let data: Vec<f32> =
            payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let mut named = model.params.named_mut();
        let slot = named.iter().position(|(n, _)| *n == name);
        let Some(slot) = slot else {
            return Err(CheckpointError::UnexpectedParam(name));
        };
        if assigned[slot] {
            return Err(CheckpointError::DuplicateParam(name));
        }
        let target = &mut named[slot].1;
        if target.shape() != dims.as_slice() {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected: target.shape().to_vec(),
                found: dims,
            });
        }
        **target = TensorData::new(dims, data);
        assigned[slot] = true;
    }
    if let Some(missing) = assigned.iter().position(|&a| !a) {
        return Err(CheckpointError::MissingParam(model.params.named()[missing].0.clone()));
    }
    Ok((model, vocab))
}

/// Writes a checkpoint through a temp file and rename.
pub fn save(path: &Path, model: &Model<f32>, vocab: &Vocab) -> Result<(), CheckpointError> {
    let bytes = to_bytes(model, vocab)?;
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Model<f32>, Vocab), CheckpointError> {
    from_bytes(&std::fs::read(path)?)
}
