//! The `MIPD1` dataset file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        5 bytes  "MIPD1"
//! kind         u8       0 = glyph, 1 = factor-grid
//! pairs        u32
//! height       u32
//! width        u32
//! channels     u32
//! factors      u32
//! per factor:  u32 name length, name bytes (UTF-8), u32 cardinality, u8 shared
//! images_x     pairs * height * width * channels f32
//! images_y     same
//! labels_x     pairs * factors i32
//! labels_y     same
//! ```

use std::fs;
use std::path::Path;

use super::{DatasetKind, Factor, PairDataset};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"MIPD1";

pub fn write_dataset(path: impl AsRef<Path>, ds: &PairDataset) -> Result<()> {
    let (xs, ys, lx, ly) = ds.raw();
    let mut out = Vec::with_capacity(64 + 4 * (xs.len() + ys.len() + lx.len() + ly.len()));
    out.extend_from_slice(MAGIC);
    out.push(match ds.kind {
        DatasetKind::Glyph => 0,
        DatasetKind::FactorGrid => 1,
    });
    for v in [ds.len(), ds.height, ds.width, ds.channels, ds.factors.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for f in &ds.factors {
        out.extend_from_slice(&(f.name.len() as u32).to_le_bytes());
        out.extend_from_slice(f.name.as_bytes());
        out.extend_from_slice(&(f.cardinality as u32).to_le_bytes());
        out.push(f.shared as u8);
    }
    for v in xs.iter().chain(ys) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in lx.iter().chain(ly) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Byte reader that reports the offset of the first problem.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], context: &'static str) -> Self {
        Reader { bytes, pos: 0, context }
    }

    pub(crate) fn error(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            context: self.context,
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.error(format!(
                "truncated while reading {what}: need {n} bytes, {} left",
                self.bytes.len() - self.pos
            ))),
        }
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let len = n.checked_mul(4).ok_or_else(|| self.error(format!("{what}: length overflow")))?;
        let raw = self.take(len, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn i32s(&mut self, n: usize, what: &str) -> Result<Vec<i32>> {
        let len = n.checked_mul(4).ok_or_else(|| self.error(format!("{what}: length overflow")))?;
        let raw = self.take(len, what)?;
        Ok(raw.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub(crate) fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let start = self.pos;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format {
            context: self.context,
            offset: start as u64,
            msg: format!("{what} is not valid UTF-8"),
        })
    }
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<PairDataset> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(&bytes, "read_dataset");
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Format {
            context: "read_dataset",
            offset: 0,
            msg: "bad magic, expected MIPD1".into(),
        });
    }
    let kind = match r.u8("dataset kind")? {
        0 => DatasetKind::Glyph,
        1 => DatasetKind::FactorGrid,
        other => return Err(r.error(format!("unknown dataset kind {other}"))),
    };
    let pairs = r.u32("pair count")? as usize;
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    let channels = r.u32("channels")? as usize;
    let n_factors = r.u32("factor count")? as usize;
    let mut factors = Vec::with_capacity(n_factors.min(64));
    for _ in 0..n_factors {
        let name = r.string("factor name")?;
        let cardinality = r.u32("factor cardinality")? as usize;
        let shared = match r.u8("factor shared flag")? {
            0 => false,
            1 => true,
            other => return Err(r.error(format!("invalid shared flag {other}"))),
        };
        factors.push(Factor {
            name,
            cardinality,
            shared,
        });
    }
    let image_values = pairs
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| r.error("image extents overflow"))?;
    let images_x = r.f32s(image_values, "images_x")?;
    let images_y = r.f32s(image_values, "images_y")?;
    let labels_x = r.i32s(pairs * n_factors, "labels_x")?;
    let labels_y = r.i32s(pairs * n_factors, "labels_y")?;
    if !r.at_end() {
        return Err(r.error("trailing bytes after labels"));
    }
    Ok(PairDataset::from_parts(
        kind, height, width, channels, factors, images_x, images_y, labels_x, labels_y,
    ))
}
