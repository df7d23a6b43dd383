//! Binary network checkpoints.
//!
//! Layout: magic `DAOF`, u32 format version, metadata (config hash string,
//! free-form extra string, training-step count), layer dims, activation tags,
//! little-endian f64 parameter block, optional Adam state, trailing CRC32
//! over everything before it.

use std::path::Path;

use thiserror::Error;

use super::{Activation, AdamState, Layer, LayerGrads, MlpNet};

const MAGIC: &[u8; 4] = b"DAOF";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes; not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {got} (expected {VERSION})")]
    Version { got: u32 },
    #[error("checkpoint truncated or corrupted length at offset {offset}")]
    Truncated { offset: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("inconsistent layer dimensions in checkpoint")]
    DimMismatch,
    #[error("unknown activation tag {tag}")]
    BadActivation { tag: u8 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub train_steps: u64,
    /// Free-form JSON for caller-owned metadata (policy variant, scales, ...).
    pub extra: String,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + len > self.buf.len() {
            return Err(CheckpointError::Truncated { offset: self.pos });
        }
        let out = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, len: usize) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(len * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn str(&mut self) -> Result<String, CheckpointError> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| CheckpointError::Truncated { offset: self.pos })
    }
}

pub fn checkpoint_save(
    path: &Path,
    net: &MlpNet,
    adam: Option<&AdamState>,
    meta: &CheckpointMeta,
) -> Result<(), CheckpointError> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.str(&meta.config_hash);
    w.str(&meta.extra);
    w.u64(meta.train_steps);
    let dims = net.dims();
    w.u32(dims.len() as u32);
    for d in &dims {
        w.u32(*d as u32);
    }
    for layer in net.layers() {
        w.u8(layer.act.tag());
    }
    for layer in net.layers() {
        w.f64s(&layer.w);
        w.f64s(&layer.b);
    }
    match adam {
        None => w.u8(0),
        Some(st) => {
            w.u8(1);
            w.f64s(&[st.lr, st.beta1, st.beta2, st.eps]);
            w.u64(st.step);
            for block in st.m.iter().chain(st.v.iter()) {
                w.f64s(&block.w);
                w.f64s(&block.b);
            }
        }
    }
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    std::fs::write(path, &w.buf)?;
    Ok(())
}

pub fn checkpoint_load(
    path: &Path,
) -> Result<(MlpNet, Option<AdamState>, CheckpointMeta), CheckpointError> {
    let buf = std::fs::read(path)?;
    if buf.len() < MAGIC.len() + 8 {
        return Err(CheckpointError::Truncated { offset: buf.len() });
    }
    let (body, crc_bytes) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::CrcMismatch { stored, computed });
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version { got: version });
    }
    let config_hash = r.str()?;
    let extra = r.str()?;
    let train_steps = r.u64()?;
    let dim_count = r.u32()? as usize;
    if dim_count < 2 {
        return Err(CheckpointError::DimMismatch);
    }
    let mut dims = Vec::with_capacity(dim_count);
    for _ in 0..dim_count {
        let d = r.u32()? as usize;
        if d == 0 {
            return Err(CheckpointError::DimMismatch);
        }
        dims.push(d);
    }
    let layer_count = dim_count - 1;
    let mut acts = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let tag = r.u8()?;
        acts.push(Activation::from_tag(tag).ok_or(CheckpointError::BadActivation { tag })?);
    }
    let mut layers = Vec::with_capacity(layer_count);
    for l in 0..layer_count {
        let (in_dim, out_dim) = (dims[l], dims[l + 1]);
        let w = r.f64s(in_dim * out_dim)?;
        let b = r.f64s(out_dim)?;
        layers.push(Layer {
            in_dim,
            out_dim,
            w,
            b,
            act: acts[l],
        });
    }
    let net = MlpNet::from_layers(layers).map_err(|_| CheckpointError::DimMismatch)?;
    let adam = match r.u8()? {
        0 => None,
        _ => {
            let lr = r.f64()?;
            let beta1 = r.f64()?;
            let beta2 = r.f64()?;
            let eps = r.f64()?;
            let step = r.u64()?;
            let read_blocks = |r: &mut Reader| -> Result<Vec<LayerGrads>, CheckpointError> {
                let mut out = Vec::with_capacity(layer_count);
                for l in 0..layer_count {
                    let w = r.f64s(dims[l] * dims[l + 1])?;
                    let b = r.f64s(dims[l + 1])?;
                    out.push(LayerGrads { w, b });
                }
                Ok(out)
            };
            let m = read_blocks(&mut r)?;
            let v = read_blocks(&mut r)?;
            Some(AdamState::from_parts(lr, beta1, beta2, eps, step, m, v))
        }
    };
    if r.pos != body.len() {
        return Err(CheckpointError::Truncated { offset: r.pos });
    }
    Ok((net, adam, CheckpointMeta { config_hash, train_steps, extra }))
}
