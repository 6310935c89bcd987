//! `PCKP` checkpoint container.
//!
//! Layout: magic `PCKP`, version (`u32` LE), metadata length (`u32` LE),
//! UTF-8 JSON metadata listing parameter names, groups and shapes, then the
//! parameter buffers as little-endian `f32` in metadata order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::nn::param::{ParamGroup, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed metadata: {0}")]
    Metadata(#[from] serde_json::Error),
    #[error("truncated parameter data for {0}")]
    Truncated(String),
    #[error("checkpoint does not match model: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Metadata {
    params: Vec<ParamMeta>,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Writes every parameter of `store`; `extra` carries model configuration.
pub fn write_checkpoint<T: Scalar, W: Write>(
    mut out: W,
    store: &ParamStore<T>,
    extra: &serde_json::Value,
) -> Result<(), CheckpointError> {
    let meta = Metadata {
        params: store
            .iter()
            .map(|(_, p)| ParamMeta {
                name: p.name.clone(),
                group: p.group,
                shape: p.value.shape().to_vec(),
            })
            .collect(),
        extra: extra.clone(),
    };
    let json = serde_json::to_vec(&meta)?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::new();
    for (_, p) in store.iter() {
        buf.clear();
        for x in p.value.data() {
            buf.extend_from_slice(&(x.wide() as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads a checkpoint into a fresh store plus its `extra` metadata.
pub fn read_checkpoint<T: Scalar, R: Read>(
    mut input: R,
) -> Result<(ParamStore<T>, serde_json::Value), CheckpointError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let len = read_u32(&mut input)? as usize;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let meta: Metadata = serde_json::from_slice(&json)?;
    let mut store = ParamStore::new();
    for pm in meta.params {
        let n: usize = pm.shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        input
            .read_exact(&mut raw)
            .map_err(|_| CheckpointError::Truncated(pm.name.clone()))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        let value = Tensor::new(&pm.shape, data).expect("sized from shape");
        store.add(pm.name, pm.group, value);
    }
    Ok((store, meta.extra))
}

/// Copies values from `src` into `dst`, requiring identical names and shapes.
pub fn load_into<T: Scalar>(dst: &mut ParamStore<T>, src: &ParamStore<T>) -> Result<(), CheckpointError> {
    if dst.len() != src.len() {
        return Err(CheckpointError::Mismatch(format!(
            "{} parameters in checkpoint, {} in model",
            src.len(),
            dst.len()
        )));
    }
    let ids: Vec<_> = dst.iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in ids {
        let sid = src
            .id(&name)
            .ok_or_else(|| CheckpointError::Mismatch(format!("missing parameter {name}")))?;
        let value = src.value(sid);
        if value.shape() != dst.value(id).shape() {
            return Err(CheckpointError::Mismatch(format!("shape of {name}")));
        }
        *dst.value_mut(id) = value.clone();
    }
    Ok(())
}
