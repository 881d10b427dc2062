//! Bit-exact persistence formats.
//!
//! MVF1 tensor record: magic "MVF1", dtype byte (0 = f32 LE, 1 = f64 LE,
//! 2 = u8 blob), ndim byte, two reserved zero bytes, ndim u32 LE dims,
//! row-major payload.
//!
//! MVC1 checkpoint: magic "MVC1", u32 LE entry count, then per entry a
//! u16 LE name length, the UTF-8 name, and an embedded MVF1 record.
//! Model parameters are stored as f64 so reconstruction is byte-identical;
//! the "meta.json" entry is a u8 blob.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamSet, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"MVF1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MVC1";
pub const META_ENTRY: &str = "meta.json";

#[derive(Debug, Clone, PartialEq)]
pub enum TensorPayload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl TensorPayload {
    fn dtype_code(&self) -> u8 {
        match self {
            TensorPayload::F32(_) => 0,
            TensorPayload::F64(_) => 1,
            TensorPayload::U8(_) => 2,
        }
    }

    fn value_size(code: u8) -> Option<usize> {
        match code {
            0 => Some(4),
            1 => Some(8),
            2 => Some(1),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorPayload::F32(v) => v.len(),
            TensorPayload::F64(v) => v.len(),
            TensorPayload::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub dims: Vec<u32>,
    pub payload: TensorPayload,
}

impl TensorRecord {
    pub fn from_array2_f32(a: &Array2<f64>) -> TensorRecord {
        TensorRecord {
            dims: vec![a.nrows() as u32, a.ncols() as u32],
            payload: TensorPayload::F32(a.iter().map(|&v| v as f32).collect()),
        }
    }

    pub fn from_tensor_f64(t: &Tensor) -> TensorRecord {
        TensorRecord {
            dims: t.shape().iter().map(|&d| d as u32).collect(),
            payload: TensorPayload::F64(t.data().to_vec()),
        }
    }

    pub fn from_blob(bytes: Vec<u8>) -> TensorRecord {
        TensorRecord { dims: vec![bytes.len() as u32], payload: TensorPayload::U8(bytes) }
    }

    pub fn to_array2_f64(&self) -> Result<Array2<f64>> {
        if self.dims.len() != 2 {
            return Err(Error::format(format!(
                "expected 2-dimensional tensor, got {} dims",
                self.dims.len()
            )));
        }
        let (r, c) = (self.dims[0] as usize, self.dims[1] as usize);
        let data: Vec<f64> = match &self.payload {
            TensorPayload::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorPayload::F64(v) => v.clone(),
            TensorPayload::U8(_) => {
                return Err(Error::format("blob record is not numeric".to_string()))
            }
        };
        Array2::from_shape_vec((r, c), data)
            .map_err(|e| Error::format(format!("tensor shape: {e}")))
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        let shape: Vec<usize> = self.dims.iter().map(|&d| d as usize).collect();
        let data: Vec<f64> = match &self.payload {
            TensorPayload::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorPayload::F64(v) => v.clone(),
            TensorPayload::U8(_) => {
                return Err(Error::format("blob record is not numeric".to_string()))
            }
        };
        Tensor::from_vec(&shape, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(TENSOR_MAGIC);
        out.push(self.payload.dtype_code());
        out.push(self.dims.len() as u8);
        out.extend_from_slice(&[0, 0]);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.payload {
            TensorPayload::F32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorPayload::F64(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorPayload::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    /// Parses one record from the front of `b`; returns it plus the number
    /// of bytes consumed. Validates everything before allocating payload
    /// space.
    pub fn parse(b: &[u8]) -> Result<(TensorRecord, usize)> {
        if b.len() < 8 {
            return Err(Error::format("tensor record truncated before header"));
        }
        if &b[0..4] != TENSOR_MAGIC {
            return Err(Error::format(format!(
                "bad tensor magic {:?}",
                &b[0..4]
            )));
        }
        let dtype = b[4];
        let value_size = TensorPayload::value_size(dtype)
            .ok_or_else(|| Error::format(format!("unknown dtype code {dtype}")))?;
        let ndim = b[5] as usize;
        if b[6] != 0 || b[7] != 0 {
            return Err(Error::format("reserved header bytes must be zero"));
        }
        let dims_end = 8 + 4 * ndim;
        if b.len() < dims_end {
            return Err(Error::format("tensor record truncated in dims"));
        }
        let mut dims = Vec::with_capacity(ndim);
        let mut count: u64 = 1;
        for i in 0..ndim {
            let off = 8 + 4 * i;
            let d = u32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]]);
            dims.push(d);
            count = count
                .checked_mul(d as u64)
                .ok_or_else(|| Error::format("dim product overflow"))?;
        }
        let payload_len = count
            .checked_mul(value_size as u64)
            .ok_or_else(|| Error::format("payload length overflow"))?;
        let available = (b.len() - dims_end) as u64;
        if payload_len > available {
            return Err(Error::format(format!(
                "payload needs {payload_len} bytes, only {available} present"
            )));
        }
        let payload_len = payload_len as usize;
        let body = &b[dims_end..dims_end + payload_len];
        let payload = match dtype {
            0 => TensorPayload::F32(
                body.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            1 => TensorPayload::F64(
                body.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            _ => TensorPayload::U8(body.to_vec()),
        };
        Ok((TensorRecord { dims, payload }, dims_end + payload_len))
    }
}

pub fn save_tensor(path: impl AsRef<Path>, rec: &TensorRecord) -> Result<()> {
    std::fs::write(path, rec.to_bytes())?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<TensorRecord> {
    let bytes = std::fs::read(&path)?;
    let (rec, used) = TensorRecord::parse(&bytes)?;
    if used != bytes.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after tensor record",
            bytes.len() - used
        )));
    }
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct CheckpointMeta {
    pub kind: String,
    pub config_hash: String,
    pub step: u64,
    pub profile: String,
    pub medoid_utterance: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    entries: Vec<(String, TensorRecord)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn insert(&mut self, name: &str, rec: TensorRecord) -> Result<()> {
        if self.get(name).is_some() {
            return Err(Error::format(format!("duplicate checkpoint entry {name}")));
        }
        self.entries.push((name.to_string(), rec));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, r)| r)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn from_params(params: &ParamSet) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for (name, t) in params.iter() {
            ck.entries.push((name.to_string(), TensorRecord::from_tensor_f64(t)));
        }
        ck
    }

    /// Rebuilds a ParamSet from every non-meta entry, in file order.
    pub fn to_params(&self) -> Result<ParamSet> {
        self.to_params_skipping(&[])
    }

    /// Like `to_params` but also skipping the named entries (auxiliary
    /// tensors that are not model parameters).
    pub fn to_params_skipping(&self, skip: &[&str]) -> Result<ParamSet> {
        let mut ps = ParamSet::new();
        for (name, rec) in &self.entries {
            if name == META_ENTRY || skip.contains(&name.as_str()) {
                continue;
            }
            ps.insert(name, rec.to_tensor()?);
        }
        Ok(ps)
    }

    /// Inserts or overwrites an entry.
    pub fn replace(&mut self, name: &str, rec: TensorRecord) {
        self.entries.retain(|(n, _)| n != name);
        self.entries.push((name.to_string(), rec));
    }

    pub fn set_meta(&mut self, meta: &CheckpointMeta) -> Result<()> {
        let json = serde_json::to_vec(meta).expect("meta serializes");
        self.entries.retain(|(n, _)| n != META_ENTRY);
        self.insert(META_ENTRY, TensorRecord::from_blob(json))
    }

    pub fn meta(&self) -> Result<Option<CheckpointMeta>> {
        match self.get(META_ENTRY) {
            None => Ok(None),
            Some(rec) => match &rec.payload {
                TensorPayload::U8(bytes) => serde_json::from_slice(bytes)
                    .map(Some)
                    .map_err(|e| Error::format(format!("meta.json: {e}"))),
                _ => Err(Error::format("meta.json entry is not a blob".to_string())),
            },
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, rec) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&rec.to_bytes());
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Checkpoint> {
        if b.len() < 8 {
            return Err(Error::format("checkpoint truncated before header"));
        }
        if &b[0..4] != CHECKPOINT_MAGIC {
            return Err(Error::format(format!("bad checkpoint magic {:?}", &b[0..4])));
        }
        let count = u32::from_le_bytes([b[4], b[5], b[6], b[7]]) as usize;
        let mut off = 8usize;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            if b.len() < off + 2 {
                return Err(Error::format("checkpoint truncated in entry header"));
            }
            let name_len = u16::from_le_bytes([b[off], b[off + 1]]) as usize;
            off += 2;
            if b.len() < off + name_len {
                return Err(Error::format("checkpoint truncated in entry name"));
            }
            let name = std::str::from_utf8(&b[off..off + name_len])
                .map_err(|_| Error::format("entry name is not UTF-8"))?
                .to_string();
            off += name_len;
            let (rec, used) = TensorRecord::parse(&b[off..])?;
            off += used;
            ck.insert(&name, rec)?;
        }
        if off != b.len() {
            return Err(Error::format(format!("{} trailing bytes", b.len() - off)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let p = path.as_ref();
        let bytes = std::fs::read(p).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::NotFound(format!("checkpoint {}", p.display()))
            } else {
                Error::Io(e)
            }
        })?;
        Checkpoint::from_bytes(&bytes)
    }
}
