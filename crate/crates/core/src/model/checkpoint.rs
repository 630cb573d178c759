//! Checkpoint layout, little-endian:
//!
//! ```text
//! "MHSM" | u32 version
//! u32 embed_dim | u32 num_heads | u32 state_dim | u32 num_layers
//! u32 num_classes | u32 bands | u64 seed
//! u32 tensor count
//! per tensor: u32 name length | name (UTF-8) | u32 rank | rank x u32 extents | f64 payload
//! ```
//!
//! Tensors appear in parameter traversal order.

use std::path::Path;

use super::{HyperParams, Mhssmamba, ModelError, ModelParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MHSM";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint<T: Scalar>(model: &Mhssmamba<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let hp = &model.hp;
    for v in [
        hp.embed_dim,
        hp.num_heads,
        hp.state_dim,
        hp.num_layers,
        hp.num_classes,
        model.bands,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&model.seed.to_le_bytes());
    let named = model.params.named();
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, tensor) in named {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &e in tensor.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, reason: impl Into<String>) -> ModelError {
        ModelError::Format {
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(self.bytes.len(), format!("file ends while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Mhssmamba<T>, ModelError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic").ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(r.err(0, "bad magic, expected MHSM"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(r.err(4, format!("unsupported version {version}")));
    }
    let mut fields = [0usize; 6];
    for (slot, name) in fields.iter_mut().zip([
        "embed_dim",
        "num_heads",
        "state_dim",
        "num_layers",
        "num_classes",
        "bands",
    ]) {
        *slot = r.u32(name)? as usize;
    }
    let [embed_dim, num_heads, state_dim, num_layers, num_classes, bands] = fields;
    let hp = HyperParams {
        embed_dim,
        num_heads,
        state_dim,
        num_layers,
        num_classes,
    };
    if let Err(e) = hp.validate() {
        return Err(r.err(8, e.to_string()));
    }
    if bands == 0 {
        return Err(r.err(28, "bands must be >= 1"));
    }
    let seed = r.u64("seed")?;

    let layout = ModelParams::layout(&hp, bands);
    let expected = layout.named();
    let count_at = r.pos;
    let count = r.u32("tensor count")? as usize;
    if count != expected.len() {
        return Err(r.err(
            count_at,
            format!("expected {} tensors, header says {count}", expected.len()),
        ));
    }
    let mut tensors = Vec::with_capacity(count);
    for (want_name, want_shape) in expected {
        let at = r.pos;
        let len = r.u32("name length")? as usize;
        let name =
            std::str::from_utf8(r.take(len, "tensor name")?).map_err(|_| r.err(at + 4, "tensor name is not UTF-8"))?;
        if name != want_name {
            return Err(r.err(at, format!("expected tensor {want_name}, found {name}")));
        }
        let rank_at = r.pos;
        let rank = r.u32("rank")? as usize;
        if rank != want_shape.len() {
            return Err(r.err(
                rank_at,
                format!("{name}: expected rank {}, found {rank}", want_shape.len()),
            ));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        if &shape != want_shape {
            return Err(r.err(
                rank_at,
                format!("{name}: expected shape {want_shape:?}, found {shape:?}"),
            ));
        }
        let n: usize = shape.iter().product();
        let payload = r.take(n * 8, "tensor payload")?;
        let data = payload
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        tensors.push(Tensor::new(&shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(r.err(r.pos, "trailing bytes after last tensor"));
    }
    Ok(Mhssmamba {
        hp,
        bands,
        seed,
        params: layout.rebuild(tensors)?,
    })
}

pub fn save_checkpoint<T: Scalar>(model: &Mhssmamba<T>, path: impl AsRef<Path>) -> Result<(), ModelError> {
    std::fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Mhssmamba<T>, ModelError> {
    decode_checkpoint(&std::fs::read(path)?)
}
