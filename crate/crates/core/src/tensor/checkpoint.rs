//! Binary tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  b"FRCRNTC\0"
//! u32    version
//! u64    metadata length, then UTF-8 metadata bytes
//! u64    entry count
//! per entry:
//!   u64 name length, name bytes
//!   u8  dtype (0 = f64, 1 = f32)
//!   u32 rank, then rank x u64 dims
//!   values, little-endian, in row-major order
//! ```

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const CONTAINER_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"FRCRNTC\0";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F64,
    /// Reduced-precision export; values are widened back to `f64` on read.
    F32,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F64 => 0,
            DType::F32 => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(DType::F64),
            1 => Ok(DType::F32),
            other => Err(Error::Checkpoint(format!("unknown dtype code {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: DType,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub metadata: String,
    pub entries: Vec<Entry>,
}

impl Container {
    pub fn new(metadata: impl Into<String>) -> Self {
        Self {
            metadata: metadata.into(),
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor, dtype: DType) {
        self.entries.push(Entry {
            name: name.into(),
            dtype,
            tensor,
        });
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
        write_bytes(w, self.metadata.as_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            write_bytes(w, e.name.as_bytes())?;
            w.write_all(&[e.dtype.code()])?;
            w.write_all(&(e.tensor.rank() as u32).to_le_bytes())?;
            for &d in e.tensor.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(e.tensor.numel() * 8);
            match e.dtype {
                DType::F64 => e
                    .tensor
                    .data()
                    .iter()
                    .for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
                DType::F32 => e
                    .tensor
                    .data()
                    .iter()
                    .for_each(|&v| buf.extend_from_slice(&(v as f32).to_le_bytes())),
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a tensor container (bad magic)".into()));
        }
        let version = u32::from_le_bytes(read_array(r)?);
        if version != CONTAINER_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported container version {version}, expected {CONTAINER_VERSION}"
            )));
        }
        let metadata = read_string(r)?;
        let count = u64::from_le_bytes(read_array(r)?);
        let mut entries = Vec::new();
        for _ in 0..count {
            let name = read_string(r)?;
            let [code] = read_array::<1, _>(r)?;
            let dtype = DType::from_code(code)?;
            let rank = u32::from_le_bytes(read_array(r)?) as usize;
            if rank > 16 {
                return Err(Error::Checkpoint(format!("{name}: implausible rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(read_array(r)?) as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflow")))?;
            let width = match dtype {
                DType::F64 => 8,
                DType::F32 => 4,
            };
            let mut raw = Vec::new();
            r.by_ref()
                .take((n * width) as u64)
                .read_to_end(&mut raw)?;
            if raw.len() != n * width {
                return Err(Error::Checkpoint(format!("{name}: truncated values")));
            }
            let data: Vec<f64> = match dtype {
                DType::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                DType::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
            };
            entries.push(Entry {
                name,
                dtype,
                tensor: Tensor::new(&shape, data)?,
            });
        }
        Ok(Self { metadata, entries })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::read_from(&mut bytes.as_slice())
    }
}

fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> Result<()> {
    w.write_all(&(bytes.len() as u64).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated container: {e}")))?;
    Ok(b)
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let len = u64::from_le_bytes(read_array(r)?);
    let mut raw = Vec::new();
    r.by_ref().take(len).read_to_end(&mut raw)?;
    if raw.len() as u64 != len {
        return Err(Error::Checkpoint("truncated string".into()));
    }
    String::from_utf8(raw).map_err(|e| Error::Checkpoint(format!("invalid UTF-8: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new("[model]\nchannels = 4\n");
        c.push(
            "enc0.conv.re",
            Tensor::new(&[2, 3], vec![0.1, -2.5, 1e-300, f64::MAX, -0.0, 3.0]).unwrap(),
            DType::F64,
        );
        c.push("bias", Tensor::scalar(0.25), DType::F64);
        c
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let back = Container::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.metadata, c.metadata);
        for (a, b) in c.entries.iter().zip(&back.entries) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.shape(), b.tensor.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.tensor), bits(&b.tensor));
        }
    }

    #[test]
    fn header_is_little_endian() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(&buf[8..12], &[1, 0, 0, 0]);
    }

    #[test]
    fn f32_export_rounds() {
        let mut c = Container::new("");
        c.push("w", Tensor::new(&[2], vec![0.1, 1.0]).unwrap(), DType::F32);
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let back = Container::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.entries[0].dtype, DType::F32);
        assert_eq!(back.entries[0].tensor.data(), &[0.1f32 as f64, 1.0]);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            Container::read_from(&mut bad.as_slice()),
            Err(Error::Checkpoint(_))
        ));
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(Container::read_from(&mut bad.as_slice()).is_err());
        let truncated = &buf[..buf.len() - 3];
        assert!(Container::read_from(&mut &truncated[..]).is_err());
    }
}
