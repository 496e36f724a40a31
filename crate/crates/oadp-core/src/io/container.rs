//! OADP-TENSORS: a little-endian container of named dense tensors.
//!
//! Layout: magic `OADPTNSR`, version u16, entry count u32, then per entry:
//! name (u16 length + UTF-8), dtype code u8 (1 = f32, 2 = f64), rank u8,
//! dims (u32 each), payload. Entry order is preserved, so write -> read ->
//! write round-trips byte for byte.

use super::FormatError;
use std::collections::HashMap;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"OADPTNSR";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self, FormatError> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(FormatError::Malformed(format!("unknown dtype code {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    name: String,
    dims: Vec<usize>,
    payload: Payload,
}

impl TensorEntry {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dtype(&self) -> Dtype {
        match self.payload {
            Payload::F32(_) => Dtype::F32,
            Payload::F64(_) => Dtype::F64,
        }
    }

    /// Values widened to f64 (exact for f32 payloads).
    pub fn as_f64(&self) -> Vec<f64> {
        match &self.payload {
            Payload::F32(v) => v.iter().map(|x| *x as f64).collect(),
            Payload::F64(v) => v.clone(),
        }
    }
}

/// Ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorContainer {
    entries: Vec<TensorEntry>,
    index: HashMap<String, usize>,
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TensorEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    fn push(&mut self, entry: TensorEntry) -> Result<(), FormatError> {
        let expect: usize = entry.dims.iter().product();
        let len = match &entry.payload {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
        };
        if expect != len {
            return Err(FormatError::Malformed(format!(
                "entry '{}' declares {:?} but holds {} values",
                entry.name, entry.dims, len
            )));
        }
        if self.index.contains_key(&entry.name) {
            return Err(FormatError::DuplicateName(entry.name));
        }
        self.index.insert(entry.name.clone(), self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    pub fn insert_f64(
        &mut self,
        name: &str,
        dims: Vec<usize>,
        data: Vec<f64>,
    ) -> Result<(), FormatError> {
        self.push(TensorEntry { name: name.to_string(), dims, payload: Payload::F64(data) })
    }

    pub fn insert_f32(
        &mut self,
        name: &str,
        dims: Vec<usize>,
        data: Vec<f32>,
    ) -> Result<(), FormatError> {
        self.push(TensorEntry { name: name.to_string(), dims, payload: Payload::F32(data) })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            let name = e.name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(e.dtype().code());
            out.push(e.dims.len() as u8);
            for &d in &e.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match &e.payload {
                Payload::F32(v) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Payload::F64(v) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let count = r.u32()? as usize;
        let mut c = TensorContainer::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| FormatError::Malformed("entry name is not UTF-8".into()))?
                .to_string();
            let dtype = Dtype::from_code(r.u8()?)?;
            let rank = r.u8()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32()? as usize);
            }
            let count: usize = dims.iter().product();
            let payload = match dtype {
                Dtype::F32 => {
                    let raw = r.take(count * 4)?;
                    Payload::F32(
                        raw.chunks_exact(4)
                            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                            .collect(),
                    )
                }
                Dtype::F64 => {
                    let raw = r.take(count * 8)?;
                    Payload::F64(
                        raw.chunks_exact(8)
                            .map(|b| {
                                f64::from_le_bytes([
                                    b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
                                ])
                            })
                            .collect(),
                    )
                }
            };
            c.push(TensorEntry { name, dims, payload })?;
        }
        if r.pos != bytes.len() {
            return Err(FormatError::Malformed(format!(
                "{} trailing bytes after the last entry",
                bytes.len() - r.pos
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        super::atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.pos + n > self.bytes.len() {
            return Err(FormatError::Malformed("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bytes() {
        let mut c = TensorContainer::new();
        c.insert_f64("a/b", vec![2, 3], vec![1.0, -2.5, 0.0, 1e-300, 3.7, f64::MIN_POSITIVE])
            .unwrap();
        c.insert_f32("c", vec![2], vec![0.5, -0.25]).unwrap();
        let bytes = c.to_bytes();
        let back = TensorContainer::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back, c);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut c = TensorContainer::new();
        c.insert_f64("x", vec![1], vec![1.0]).unwrap();
        assert!(matches!(
            c.insert_f32("x", vec![1], vec![1.0]),
            Err(FormatError::DuplicateName(_))
        ));
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = TensorContainer::new().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(TensorContainer::from_bytes(&bytes), Err(FormatError::BadMagic)));
    }

    #[test]
    fn truncation_rejected() {
        let mut c = TensorContainer::new();
        c.insert_f64("x", vec![4], vec![1.0; 4]).unwrap();
        let bytes = c.to_bytes();
        for cut in [bytes.len() - 1, bytes.len() - 9, 12, 5] {
            assert!(TensorContainer::from_bytes(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn payload_length_must_match_dims() {
        let mut c = TensorContainer::new();
        assert!(c.insert_f64("x", vec![3], vec![1.0; 2]).is_err());
    }

    #[test]
    fn f32_widens_exactly() {
        let mut c = TensorContainer::new();
        c.insert_f32("x", vec![2], vec![0.5, 1.25]).unwrap();
        assert_eq!(c.get("x").unwrap().as_f64(), vec![0.5, 1.25]);
    }
}
