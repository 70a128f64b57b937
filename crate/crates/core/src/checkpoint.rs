//! Versioned binary checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic     8 bytes  "XSHOTCKP"
//! version   u32
//! kind      u32      1 = VAE-GAN, 2 = projection
//! meta_len  u32, then meta_len bytes of UTF-8 JSON
//! n_params  u32, then per parameter:
//!   name_len u32, name bytes, rows u32, cols u32, step u64,
//!   rows*cols f64 values, rows*cols f64 Adam m, rows*cols f64 Adam v
//! ```
//!
//! Values are stored at full `f64` precision so a save/load cycle is exact.
//! The whole file is parsed before anything is returned.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Parameter, RealArray};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"XSHOTCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    VaeGan = 1,
    Projection = 2,
}

impl CheckpointKind {
    fn from_u32(v: u32) -> Result<Self> {
        match v {
            1 => Ok(CheckpointKind::VaeGan),
            2 => Ok(CheckpointKind::Projection),
            other => Err(Error::Checkpoint(format!("unknown checkpoint kind {other}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub meta: serde_json::Value,
    pub params: Vec<(String, Parameter)>,
}

impl Checkpoint {
    pub fn new(kind: CheckpointKind, meta: serde_json::Value) -> Self {
        Self {
            kind,
            meta,
            params: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, p: &Parameter) {
        self.params.push((name.into(), p.clone()));
    }

    /// Removes and returns the named parameter, checking its shape.
    pub fn take(&mut self, name: &str, shape: (usize, usize)) -> Result<Parameter> {
        let pos = self
            .params
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        let (_, p) = self.params.remove(pos);
        if p.shape() != shape {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has shape {:?}, expected {shape:?}",
                p.shape()
            )));
        }
        Ok(p)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.kind as u32).to_le_bytes());
        let meta = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&len_u32(meta.len())?.to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&len_u32(self.params.len())?.to_le_bytes());
        for (name, p) in &self.params {
            out.extend_from_slice(&len_u32(name.len())?.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let (r, c) = p.shape();
            out.extend_from_slice(&len_u32(r)?.to_le_bytes());
            out.extend_from_slice(&len_u32(c)?.to_le_bytes());
            out.extend_from_slice(&p.step.to_le_bytes());
            for arr in [&p.value, &p.adam_m, &p.adam_v] {
                for v in arr.as_slice() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let kind = CheckpointKind::from_u32(r.u32()?)?;
        let meta_len = r.u32()? as usize;
        let meta = serde_json::from_slice(r.take(meta_len)?)?;
        let n = r.u32()? as usize;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let step = r.u64()?;
            let mut arr = || -> Result<RealArray> {
                let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                RealArray::new(rows, cols, data)
                    .map_err(|e| Error::Checkpoint(format!("parameter {name}: {e}")))
            };
            let value = arr()?;
            let m = arr()?;
            let v = arr()?;
            params.push((name, Parameter::with_state(value, m, v, step)));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { kind, meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} overflows u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut p = Parameter::new(RealArray::from_rows(&[[0.1, -2.5e-300], [3.0, 1.0 / 3.0]]).unwrap());
        p.adam_m = p.value.map(|v| v * 0.5);
        p.adam_v = p.value.map(|v| v * v);
        p.step = 17;
        let mut ck = Checkpoint::new(CheckpointKind::VaeGan, serde_json::json!({"x": 0.1}));
        ck.push("layer.w", &p);
        ck
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let mut back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.meta, ck.meta);
        let p = back.take("layer.w", (2, 2)).unwrap();
        let orig = &ck.params[0].1;
        assert_eq!(p.value, orig.value);
        assert_eq!(p.adam_m, orig.adam_m);
        assert_eq!(p.adam_v, orig.adam_v);
        assert_eq!(p.step, 17);
    }

    #[test]
    fn tampering_is_detected() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'Y';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));

        let mut old = bytes.clone();
        old[8..12].copy_from_slice(&7u32.to_le_bytes());
        let err = Checkpoint::from_bytes(&old).unwrap_err();
        assert!(matches!(err, Error::CheckpointVersion { found: 7, expected: 1 }));
        assert!(err.to_string().contains('7') && err.to_string().contains('1'));

        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
