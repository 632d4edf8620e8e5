//! Binary checkpoint: `RDCK`, version, header, tensors, CRC32.
//!
//! Layout after the 4-byte magic and the u32 version:
//! a u32-length-prefixed UTF-8 header of `key=value` lines, a u32 tensor
//! count, then per tensor a u32-length-prefixed name, a u32 rank, u64 dims and
//! f32 data, all little-endian. A trailing u32 CRC32 covers everything after
//! the version.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use super::tape::Tensor;
use super::{AdamState, Arch, DenoiserParams};
use crate::molgraph::AtomVocab;
use crate::pipeline::StageConfig;

const MAGIC: &[u8; 4] = b"RDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One denoiser with its optimizer state, stored under a name prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedModel {
    pub prefix: String,
    pub params: DenoiserParams,
    pub adam: AdamState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub vocab: AtomVocab,
    pub config: StageConfig,
    pub models: Vec<NamedModel>,
}

impl Checkpoint {
    pub fn model(&self, prefix: &str) -> Option<&NamedModel> {
        self.models.iter().find(|m| m.prefix == prefix)
    }

    /// Fails unless the checkpoint was trained on exactly this vocabulary.
    pub fn check_vocab(&self, vocab: &AtomVocab) -> Result<(), CheckpointError> {
        if &self.vocab != vocab {
            return Err(CheckpointError::Incompatible(format!(
                "checkpoint vocabulary [{}] (size {}) differs from [{}] (size {})",
                self.vocab.symbols().join(","),
                self.vocab.len(),
                vocab.symbols().join(","),
                vocab.len()
            )));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, 2);
    out.extend_from_slice(&(t.rows as u64).to_le_bytes());
    out.extend_from_slice(&(t.cols as u64).to_le_bytes());
    for &x in &t.data {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

fn header(ck: &Checkpoint) -> String {
    let mut lines = vec![format!("vocab={}", ck.vocab.symbols().join(","))];
    lines.extend(ck.config.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}")));
    let prefixes: Vec<&str> = ck.models.iter().map(|m| m.prefix.as_str()).collect();
    lines.push(format!("models={}", prefixes.join(",")));
    for m in &ck.models {
        let a = m.params.arch();
        let p = &m.prefix;
        lines.push(format!("{p}.n_layer={}", a.n_layer));
        lines.push(format!("{p}.node_width={}", a.node_width));
        lines.push(format!("{p}.edge_width={}", a.edge_width));
        lines.push(format!("{p}.global_width={}", a.global_width));
        lines.push(format!("{p}.heads={}", a.heads));
        lines.push(format!("{p}.atom_classes={}", a.atom_classes));
        lines.push(format!("{p}.seed={}", m.params.seed()));
        lines.push(format!("{p}.adam_step={}", m.adam.step));
    }
    lines.join("\n")
}

pub fn write_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut body = Vec::new();
    let h = header(ck);
    put_u32(&mut body, h.len() as u32);
    body.extend_from_slice(h.as_bytes());
    let count: usize = ck.models.iter().map(|m| 3 * m.params.tensors().len()).sum();
    put_u32(&mut body, count as u32);
    for m in &ck.models {
        for (name, t) in m.params.names().iter().zip(m.params.tensors()) {
            put_tensor(&mut body, &format!("{}.{name}", m.prefix), t);
        }
        for (name, t) in m.params.names().iter().zip(&m.adam.m) {
            put_tensor(&mut body, &format!("{}.adam.m.{name}", m.prefix), t);
        }
        for (name, t) in m.params.names().iter().zip(&m.adam.v) {
            put_tensor(&mut body, &format!("{}.adam.v.{name}", m.prefix), t);
        }
    }
    let mut out = Vec::with_capacity(body.len() + 12);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    out.extend_from_slice(&body);
    put_u32(&mut out, crc32fast::hash(&body));
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Malformed("non-UTF-8 text".into()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor), CheckpointError> {
        let name = self.string()?;
        let rank = self.u32()? as usize;
        if rank == 0 || rank > 2 {
            return Err(CheckpointError::Malformed(format!("tensor {name} has rank {rank}")));
        }
        let dims = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let (rows, cols) = if rank == 1 { (1, dims[0]) } else { (dims[0], dims[1]) };
        let len = rows.checked_mul(cols).ok_or(CheckpointError::Truncated)?;
        let raw = self.take(len.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        Ok((name, Tensor::from_vec(rows, cols, data)))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(CheckpointError::Truncated);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let body = &bytes[8..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }

    let mut r = Reader { bytes: body, pos: 0 };
    let text = r.string()?;
    let header: BTreeMap<String, String> = text
        .lines()
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    let get = |k: &str| header.get(k).ok_or_else(|| CheckpointError::Malformed(format!("header lacks {k}")));
    let num = |k: &str| -> Result<u64, CheckpointError> {
        get(k)?.parse().map_err(|_| CheckpointError::Malformed(format!("header field {k}")))
    };

    let symbols: Vec<&str> = get("vocab")?.split(',').collect();
    let vocab = AtomVocab::from_symbols(&symbols).ok_or_else(|| CheckpointError::Malformed("vocabulary".into()))?;
    let config = StageConfig::from_pairs(&header, StageConfig::new(1))
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;

    let count = r.u32()? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let (name, t) = r.tensor()?;
        tensors.insert(name, t);
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }

    let mut models = Vec::new();
    for prefix in get("models")?.split(',').filter(|s| !s.is_empty()) {
        let arch = Arch {
            n_layer: num(&format!("{prefix}.n_layer"))? as usize,
            node_width: num(&format!("{prefix}.node_width"))? as usize,
            edge_width: num(&format!("{prefix}.edge_width"))? as usize,
            global_width: num(&format!("{prefix}.global_width"))? as usize,
            heads: num(&format!("{prefix}.heads"))? as usize,
            atom_classes: num(&format!("{prefix}.atom_classes"))? as usize,
        };
        if arch.atom_classes != vocab.len() {
            return Err(CheckpointError::Incompatible(format!(
                "model {prefix} has {} atom classes but vocabulary has {}",
                arch.atom_classes,
                vocab.len()
            )));
        }
        let seed = num(&format!("{prefix}.seed"))?;
        let names = super::build_layout(&arch).1.into_iter().map(|s| s.name).collect::<Vec<_>>();
        let mut take = |key: String| tensors.remove(&key).ok_or(CheckpointError::Malformed(format!("missing tensor {key}")));
        let mut params = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for name in &names {
            params.push((name.clone(), take(format!("{prefix}.{name}"))?));
            m.push(take(format!("{prefix}.adam.m.{name}"))?);
            v.push(take(format!("{prefix}.adam.v.{name}"))?);
        }
        let params =
            DenoiserParams::from_tensors(arch, seed, params).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let adam = AdamState { step: num(&format!("{prefix}.adam_step"))?, m, v };
        models.push(NamedModel { prefix: prefix.to_string(), params, adam });
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(CheckpointError::Malformed(format!("unexpected tensor {extra}")));
    }
    Ok(Checkpoint { vocab, config, models })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, write_checkpoint(ck))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    read_checkpoint(&std::fs::read(path)?)
}
