//! Checkpoint file.
//!
//! Layout (little-endian): `"PDNN"`, u16 version, u32 descriptor count and
//! length-prefixed descriptors, u32 parameter-tensor count and per tensor
//! u32 length + f32 values, the same for running statistics, f64 learning
//! rate, u32 epoch, u64 seed, u32 history length and per epoch three f64
//! (train loss, dev loss, learning rate).

use super::{Model, ModelSpec, Scalar};
use crate::{Error, Result};
use std::io::Write;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PDNN";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub dev_loss: f64,
    /// Rate used during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub spec: ModelSpec,
    pub params: Vec<Vec<f32>>,
    pub buffers: Vec<Vec<f32>>,
    pub lr: f64,
    pub epoch: u32,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
}

impl ModelCheckpoint {
    pub fn from_model<T: Scalar>(model: &Model<T>, lr: f64, epoch: u32, seed: u64, history: Vec<EpochRecord>) -> Self {
        let (params, buffers) = model.state();
        Self {
            spec: model.spec().clone(),
            params,
            buffers,
            lr,
            epoch,
            seed,
            history,
        }
    }

    pub fn model(&self) -> Result<Model<f32>> {
        Model::from_checkpoint(self)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let desc = self.spec.descriptors();
        put_u32(&mut buf, desc.len());
        for d in &desc {
            put_u32(&mut buf, d.len());
            buf.extend_from_slice(d.as_bytes());
        }
        for group in [&self.params, &self.buffers] {
            put_u32(&mut buf, group.len());
            for t in group {
                put_u32(&mut buf, t.len());
                for v in t {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        buf.extend_from_slice(&self.lr.to_le_bytes());
        buf.extend_from_slice(&self.epoch.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        put_u32(&mut buf, self.history.len());
        for h in &self.history {
            for v in [h.train_loss, h.dev_loss, h.lr] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(r.err("bad magic bytes"));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != CHECKPOINT_VERSION {
            return Err(r.err(&format!("unsupported version {version}")));
        }
        let n = r.u32()?;
        let mut desc = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let len = r.u32()?;
            let s = std::str::from_utf8(r.take(len)?).map_err(|_| r.err("descriptor is not UTF-8"))?;
            desc.push(s.to_string());
        }
        let spec = ModelSpec::from_descriptors(&desc).map_err(|e| r.err(&e.to_string()))?;
        let mut groups = Vec::new();
        for _ in 0..2 {
            let count = r.u32()?;
            let mut g = Vec::with_capacity(count.min(1024));
            for _ in 0..count {
                let len = r.u32()?;
                let raw = r.take(len.checked_mul(4).ok_or_else(|| r.err("tensor too large"))?)?;
                g.push(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect(),
                );
            }
            groups.push(g);
        }
        let buffers = groups.pop().expect("two groups");
        let params = groups.pop().expect("two groups");
        let lr = f64::from_le_bytes(r.array()?);
        let epoch = u32::from_le_bytes(r.array()?);
        let seed = u64::from_le_bytes(r.array()?);
        let n = r.u32()?;
        let mut history = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            history.push(EpochRecord {
                train_loss: f64::from_le_bytes(r.array()?),
                dev_loss: f64::from_le_bytes(r.array()?),
                lr: f64::from_le_bytes(r.array()?),
            });
        }
        if r.pos != bytes.len() {
            return Err(r.err("trailing bytes"));
        }
        let ckpt = Self {
            spec,
            params,
            buffers,
            lr,
            epoch,
            seed,
            history,
        };
        Model::<f32>::from_checkpoint(&ckpt).map_err(|e| r.err(&e.to_string()))?;
        Ok(ckpt)
    }

    /// Writes atomically (temporary file, then rename).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
        tmp.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile {
                path: path.to_path_buf(),
            });
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("checkpoint field exceeds u32");
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: &str) -> Error {
        Error::Checkpoint {
            path: self.path.to_path_buf(),
            reason: reason.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        match self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()) {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                path: self.path.to_path_buf(),
                reason: format!("need {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()),
            }),
        }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }
}
