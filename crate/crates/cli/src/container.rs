//! A small binary container for named arrays, shared by checkpoints and
//! exported codes.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "MLCSCARR"
//! version    u32
//! count      u32      number of entries
//! index      count x { name_len u16, name utf-8, dtype u8, ndim u8,
//!                      dims u64 x ndim, offset u64, byte_len u64 }
//! payload    entries back to back; offsets are relative to its start
//! ```
//!
//! `dtype` is 0 for IEEE-754 f64, 1 for u64 and 2 for raw bytes.

use std::fs;
use std::path::Path;

use crate::error::CliError;

pub const MAGIC: &[u8; 8] = b"MLCSCARR";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    F64 { shape: Vec<usize>, data: Vec<f64> },
    U64(Vec<u64>),
    Bytes(Vec<u8>),
}

impl Entry {
    fn dtype(&self) -> u8 {
        match self {
            Entry::F64 { .. } => 0,
            Entry::U64(_) => 1,
            Entry::Bytes(_) => 2,
        }
    }

    fn shape(&self) -> Vec<usize> {
        match self {
            Entry::F64 { shape, .. } => shape.clone(),
            Entry::U64(v) => vec![v.len()],
            Entry::Bytes(v) => vec![v.len()],
        }
    }

    fn payload(&self) -> Vec<u8> {
        match self {
            Entry::F64 { data, .. } => data.iter().flat_map(|v| v.to_le_bytes()).collect(),
            Entry::U64(v) => v.iter().flat_map(|v| v.to_le_bytes()).collect(),
            Entry::Bytes(v) => v.clone(),
        }
    }
}

fn corrupt(message: impl Into<String>) -> CliError {
    CliError::Checkpoint(message.into())
}

/// Ordered collection of named entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    entries: Vec<(String, Entry)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("truncated container at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, CliError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CliError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces an entry.
    pub fn insert(&mut self, name: impl Into<String>, entry: Entry) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = entry,
            None => self.entries.push((name, entry)),
        }
    }

    pub fn insert_f64(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape and data disagree");
        self.insert(
            name,
            Entry::F64 {
                shape: shape.to_vec(),
                data,
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn f64(&self, name: &str) -> Result<(&[usize], &[f64]), CliError> {
        match self.get(name) {
            Some(Entry::F64 { shape, data }) => Ok((shape, data)),
            Some(_) => Err(corrupt(format!("entry {name} is not an f64 array"))),
            None => Err(corrupt(format!("missing entry {name}"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64], CliError> {
        match self.get(name) {
            Some(Entry::U64(v)) => Ok(v),
            Some(_) => Err(corrupt(format!("entry {name} is not a u64 array"))),
            None => Err(corrupt(format!("missing entry {name}"))),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8], CliError> {
        match self.get(name) {
            Some(Entry::Bytes(v)) => Ok(v),
            Some(_) => Err(corrupt(format!("entry {name} is not a byte array"))),
            None => Err(corrupt(format!("missing entry {name}"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payloads: Vec<Vec<u8>> = self.entries.iter().map(|(_, e)| e.payload()).collect();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend((self.entries.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for ((name, entry), payload) in self.entries.iter().zip(&payloads) {
            let shape = entry.shape();
            out.extend((name.len() as u16).to_le_bytes());
            out.extend(name.as_bytes());
            out.push(entry.dtype());
            out.push(shape.len() as u8);
            for d in shape {
                out.extend((d as u64).to_le_bytes());
            }
            out.extend(offset.to_le_bytes());
            out.extend((payload.len() as u64).to_le_bytes());
            offset += payload.len() as u64;
        }
        for p in payloads {
            out.extend(p);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(corrupt("not an mlcsc array container (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported container version {version}")));
        }
        let count = r.u32()? as usize;
        let mut index = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| corrupt("entry name is not UTF-8"))?;
            let dtype = r.u8()?;
            let ndim = r.u8()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let offset = r.u64()? as usize;
            let len = r.u64()? as usize;
            index.push((name, dtype, shape, offset, len));
        }
        let payload = &bytes[r.pos..];
        let mut out = Container::new();
        for (name, dtype, shape, offset, len) in index {
            let raw = offset
                .checked_add(len)
                .filter(|&end| end <= payload.len())
                .map(|end| &payload[offset..end])
                .ok_or_else(|| corrupt(format!("entry {name} points outside the payload")))?;
            let entry = match dtype {
                0 => {
                    if len % 8 != 0 || shape.iter().product::<usize>() * 8 != len {
                        return Err(corrupt(format!("entry {name} has inconsistent size")));
                    }
                    let data = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    Entry::F64 { shape, data }
                }
                1 => {
                    if len % 8 != 0 {
                        return Err(corrupt(format!("entry {name} has inconsistent size")));
                    }
                    Entry::U64(
                        raw.chunks_exact(8)
                            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    )
                }
                2 => Entry::Bytes(raw.to_vec()),
                other => return Err(corrupt(format!("entry {name} has unknown dtype {other}"))),
            };
            out.insert(name, entry);
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path)
            .map_err(|e| corrupt(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
