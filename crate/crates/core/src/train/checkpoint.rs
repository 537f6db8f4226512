//! `GANOMCKP` checkpoint files.
//!
//! Layout: 8-byte magic, `u32` version, `u32` record count, then records.
//! Each record is a `u64` byte length followed by a `u32` name length, the
//! UTF-8 name, a `u8` dtype tag, a `u32` rank, `rank` `u32` extents and the
//! little-endian payload. All integers are little-endian.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GANOMCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_U64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum RecordData {
    F32(Tensor),
    U64 { shape: Vec<usize>, data: Vec<u64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub data: RecordData,
}

/// Ordered collection of named records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    records: Vec<Record>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    fn push(&mut self, name: String, data: RecordData) -> Result<()> {
        if self.records.iter().any(|r| r.name == name) {
            return Err(Error::Checkpoint(format!("duplicate record {name}")));
        }
        self.records.push(Record { name, data });
        Ok(())
    }

    pub fn insert_tensor(&mut self, name: impl Into<String>, t: &Tensor) -> Result<()> {
        self.push(name.into(), RecordData::F32(t.clone()))
    }

    pub fn insert_u64(&mut self, name: impl Into<String>, values: &[u64]) -> Result<()> {
        self.push(
            name.into(),
            RecordData::U64 {
                shape: vec![values.len()],
                data: values.to_vec(),
            },
        )
    }

    pub fn insert_f32s(&mut self, name: impl Into<String>, values: &[f32]) -> Result<()> {
        self.insert_tensor(name, &Tensor::from_vec(values.to_vec()))
    }

    fn find(&self, name: &str) -> Result<&RecordData> {
        self.records
            .iter()
            .find(|r| r.name == name)
            .map(|r| &r.data)
            .ok_or_else(|| Error::Checkpoint(format!("missing record {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.records.iter().any(|r| r.name == name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        match self.find(name)? {
            RecordData::F32(t) => Ok(t),
            RecordData::U64 { .. } => Err(Error::Checkpoint(format!("record {name} is not f32"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match self.find(name)? {
            RecordData::U64 { data, .. } => Ok(data),
            RecordData::F32(_) => Err(Error::Checkpoint(format!("record {name} is not u64"))),
        }
    }

    /// A `u64` record holding exactly `n` values.
    pub fn u64s_exact(&self, name: &str, n: usize) -> Result<&[u64]> {
        let v = self.u64s(name)?;
        if v.len() != n {
            return Err(Error::Checkpoint(format!(
                "record {name} holds {} values, expected {n}",
                v.len()
            )));
        }
        Ok(v)
    }

    pub fn f32s_exact(&self, name: &str, n: usize) -> Result<&[f32]> {
        let t = self.tensor(name)?;
        if t.numel() != n {
            return Err(Error::Checkpoint(format!(
                "record {name} holds {} values, expected {n}",
                t.numel()
            )));
        }
        Ok(t.data())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            let body = encode_record(r);
            out.extend_from_slice(&(body.len() as u64).to_le_bytes());
            out.extend_from_slice(&body);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a GANOMCKP file (bad magic)".into()));
        }
        parse_after_magic(&mut cur)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path.as_ref(), &self.to_bytes())
    }

    /// Reads a checkpoint, checking the magic before reading the body.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic).map_err(|_| {
            Error::Checkpoint(format!("{}: too short for a header", path.display()))
        })?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "{}: not a GANOMCKP file (bad magic)",
                path.display()
            )));
        }
        let mut rest = Vec::new();
        f.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
        parse_after_magic(&mut Cursor {
            bytes: &rest,
            pos: 0,
        })
    }
}

fn encode_record(r: &Record) -> Vec<u8> {
    let mut body = Vec::new();
    body.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
    body.extend_from_slice(r.name.as_bytes());
    let (tag, shape): (u8, &[usize]) = match &r.data {
        RecordData::F32(t) => (DTYPE_F32, t.shape()),
        RecordData::U64 { shape, .. } => (DTYPE_U64, shape),
    };
    body.push(tag);
    body.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        body.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match &r.data {
        RecordData::F32(t) => t
            .data()
            .iter()
            .for_each(|v| body.extend_from_slice(&v.to_le_bytes())),
        RecordData::U64 { data, .. } => data
            .iter()
            .for_each(|v| body.extend_from_slice(&v.to_le_bytes())),
    }
    body
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn parse_after_magic(cur: &mut Cursor<'_>) -> Result<Checkpoint> {
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let count = cur.u32("record count")?;
    let mut ckpt = Checkpoint::new();
    for i in 0..count {
        let len = cur.u64("record length")?;
        let len = usize::try_from(len)
            .map_err(|_| Error::Checkpoint(format!("record {i} length overflows")))?;
        let body = cur.take(len, "record body")?;
        let record = parse_record(body).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("corrupt record {i}: {m}")),
            other => other,
        })?;
        ckpt.push(record.name, record.data)?;
    }
    if !cur.done() {
        return Err(Error::Checkpoint("trailing bytes after last record".into()));
    }
    Ok(ckpt)
}

fn parse_record(body: &[u8]) -> Result<Record> {
    let mut cur = Cursor {
        bytes: body,
        pos: 0,
    };
    let name_len = cur.u32("name length")? as usize;
    let name = std::str::from_utf8(cur.take(name_len, "name")?)
        .map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?
        .to_string();
    let tag = cur.take(1, "dtype")?[0];
    let rank = cur.u32("rank")? as usize;
    if rank > crate::tensor::MAX_RANK {
        return Err(Error::Checkpoint(format!("{name}: rank {rank} too large")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(cur.u32("extent")? as usize);
    }
    let numel: usize = shape.iter().product();
    let elem = match tag {
        DTYPE_F32 => 4,
        DTYPE_U64 => 8,
        other => {
            return Err(Error::Checkpoint(format!(
                "{name}: unknown dtype tag {other}"
            )))
        }
    };
    let remaining = body.len() - cur.pos;
    if remaining != numel * elem {
        return Err(Error::Checkpoint(format!(
            "{name}: payload has {remaining} bytes, shape {shape:?} needs {}",
            numel * elem
        )));
    }
    let payload = &body[cur.pos..];
    let data = match tag {
        DTYPE_F32 => {
            let vals = payload
                .chunks(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            RecordData::F32(
                Tensor::new(&shape, vals).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?,
            )
        }
        _ => RecordData::U64 {
            data: payload
                .chunks(8)
                .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect(),
            shape,
        },
    };
    Ok(Record { name, data })
}
