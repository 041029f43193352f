//! Binary model checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "HZR1" | u32 version | u32 len, spec JSON | u32 tensor count
//! per tensor: u32 len, name | u32 rank (4) | 4 × u32 dims | f32 data
//! ```

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{ModelError, ModelSpec, Network};
use crate::nn::Shape;

pub const MAGIC: [u8; 4] = *b"HZR1";
pub const FORMAT_VERSION: u32 = 1;
const RANK: u32 = 4;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint has unexpected tensor {0}")]
    UnexpectedTensor(String),
    #[error("tensor {name}: expected shape {expected}, found {found}")]
    ShapeMismatch { name: String, expected: Shape, found: Shape },
    #[error("{0} unexpected bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("checkpoint spec: {0}")]
    BadSpec(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

/// Serializes the spec and every stored tensor.
pub fn to_bytes(net: &Network<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_bytes(&mut out, net.spec().to_json().as_bytes());
    let params = net.params();
    put_u32(&mut out, params.len() as u32);
    for p in &params {
        put_bytes(&mut out, p.name.as_bytes());
        put_u32(&mut out, RANK);
        for d in p.tensor.shape().dims() {
            put_u32(&mut out, d as u32);
        }
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CheckpointError::Truncated(what.to_string()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String, CheckpointError> {
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|e| ModelError::InvalidSpec(format!("{what}: {e}")).into())
    }
}

/// Rebuilds a network from checkpoint bytes.
pub fn from_bytes(bytes: &[u8]) -> Result<Network<f32>, CheckpointError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let magic: [u8; 4] = c.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = c.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let spec = ModelSpec::from_json(&c.string("spec")?)?;
    let mut net = Network::<f32>::build(spec, 0)?;
    let count = c.u32("tensor count")? as usize;

    let mut params = net.params_mut();
    let mut seen = vec![false; params.len()];
    for _ in 0..count {
        let name = c.string("tensor name")?;
        let rank = c.u32(&name)?;
        if rank != RANK {
            return Err(ModelError::InvalidSpec(format!("tensor {name} has rank {rank}")).into());
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = c.u32(&name)? as usize;
        }
        let found = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        let idx = params
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| CheckpointError::UnexpectedTensor(name.clone()))?;
        let target = &mut params[idx].tensor;
        if target.shape() != found {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected: target.shape(),
                found,
            });
        }
        let raw = c.take(found.len() * 4, &name)?;
        for (v, chunk) in target.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
        seen[idx] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(CheckpointError::MissingTensor(params[i].name.clone()));
    }
    drop(params);
    if c.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - c.pos));
    }
    Ok(net)
}

pub fn save(net: &Network<f32>, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(net))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Network<f32>, CheckpointError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    from_bytes(&buf)
}
