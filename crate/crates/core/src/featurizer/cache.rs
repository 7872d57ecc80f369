//! Segment cache file.
//!
//! Layout (little-endian): `"PDFC"`, u16 version, u32 K, u32 B, u32 count,
//! then per segment: u32 speaker-id length + UTF-8 bytes, u8 label, u32
//! utterance-id length + bytes, u32 segment index, `K * B` f32 values in
//! row-major (subband-major) order.

use super::FeatureSegment;
use crate::corpus::Label;
use crate::{Error, Matrix, Result};
use std::io::Write;
use std::path::Path;

pub const CACHE_MAGIC: &[u8; 4] = b"PDFC";
pub const CACHE_VERSION: u16 = 1;

/// Writes atomically (temporary file in the same directory, then rename).
/// Values are stored as f32.
pub fn cache_write(segments: &[FeatureSegment], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (k, b) = segments
        .first()
        .map(|s| (s.values.rows(), s.values.cols()))
        .unwrap_or((0, 0));
    if let Some(bad) = segments.iter().find(|s| (s.values.rows(), s.values.cols()) != (k, b)) {
        return Err(Error::DimensionMismatch(format!(
            "segment {}x{} in a cache of {k}x{b} segments",
            bad.values.rows(),
            bad.values.cols()
        )));
    }

    let mut buf = Vec::with_capacity(18 + segments.len() * (k * b * 4 + 32));
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    for v in [k, b, segments.len()] {
        buf.extend_from_slice(&u32_of(v)?.to_le_bytes());
    }
    for s in segments {
        put_str(&mut buf, &s.speaker_id)?;
        buf.push(s.label.index() as u8);
        put_str(&mut buf, &s.utterance_id)?;
        buf.extend_from_slice(&s.index.to_le_bytes());
        for &v in s.values.iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }

    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(&buf).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn cache_read(path: impl AsRef<Path>) -> Result<Vec<FeatureSegment>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };

    let magic = r.take(4, "magic")?;
    if magic != CACHE_MAGIC {
        return Err(Error::CacheFormat {
            path: path.to_path_buf(),
            reason: format!("bad magic bytes {magic:?}"),
        });
    }
    let version = r.u16("version")?;
    if version != CACHE_VERSION {
        return Err(Error::CacheFormat {
            path: path.to_path_buf(),
            reason: format!("unsupported version {version}"),
        });
    }
    let k = r.u32("K")? as usize;
    let b = r.u32("B")? as usize;
    let count = r.u32("count")? as usize;
    if count > 0 && (k == 0 || b == 0) {
        return Err(Error::DimensionMismatch(format!(
            "{}: {count} segments declared with K={k}, B={b}",
            path.display()
        )));
    }

    let mut out = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let speaker_id = r.string("speaker id")?;
        let label_byte = r.take(1, "label")?[0];
        let label = Label::from_index(label_byte).ok_or_else(|| Error::CacheFormat {
            path: path.to_path_buf(),
            reason: format!("segment {i}: invalid label {label_byte}"),
        })?;
        let utterance_id = r.string("utterance id")?;
        let index = r.u32("segment index")?;
        let raw = r.take(k * b * 4, "segment values")?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        out.push(FeatureSegment {
            values: Matrix::from_vec(k, b, values),
            speaker_id,
            label,
            utterance_id,
            index,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::CacheFormat {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(out)
}

fn u32_of(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::DimensionMismatch(format!("{v} does not fit in u32")))
}

fn put_str(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    buf.extend_from_slice(&u32_of(s.len())?.to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                path: self.path.to_path_buf(),
                reason: format!(
                    "{what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            }),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::CacheFormat {
            path: self.path.to_path_buf(),
            reason: format!("{what} is not valid UTF-8"),
        })
    }
}
