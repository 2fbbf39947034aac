//! Reader and writer for the `ATSR` tensor container and the plain-text
//! confidence sidecar that accompanies mask tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size        field
//! 0       4           magic "ATSR"
//! 4       1           version (1)
//! 5       1           dtype   (0 = f16, 1 = f32, 2 = u8)
//! 6       1           rank    (2 or 3)
//! 7       1           padding (0)
//! 8       4 * rank    dims, u32 each
//! 8+4r    ...         payload, row-major
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use half::f16;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"ATSR";
pub const TENSOR_VERSION: u8 = 1;
/// Fixed prologue before the dims array.
pub const PROLOGUE_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F16,
    F32,
    U8,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F16 => 0,
            DType::F32 => 1,
            DType::U8 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F16),
            1 => Ok(DType::F32),
            2 => Ok(DType::U8),
            other => Err(Error::UnsupportedDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F16 => 2,
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }
}

/// Typed payload. f16 values are kept as half floats so a read/write cycle
/// preserves every bit, NaN payloads included.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F16(Vec<f16>),
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F16(_) => DType::F16,
            TensorData::F32(_) => DType::F32,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F16(v) => v.len(),
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<u32>,
    pub data: TensorData,
}

impl TensorFile {
    pub fn new(dims: Vec<u32>, data: TensorData) -> Result<Self> {
        let t = TensorFile { dims, data };
        t.validate()?;
        Ok(t)
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn element_count(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    pub fn payload_len(&self) -> usize {
        self.element_count() * self.dtype().size()
    }

    pub fn encoded_len(&self) -> usize {
        PROLOGUE_LEN + 4 * self.dims.len() + self.payload_len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::Format("tensor has no dims".into()));
        }
        if !(2..=3).contains(&self.dims.len()) {
            return Err(Error::Format(format!(
                "rank {} not supported (expected 2 or 3)",
                self.dims.len()
            )));
        }
        if self.data.len() != self.element_count() {
            return Err(Error::Format(format!(
                "dims {:?} imply {} values, payload has {}",
                self.dims,
                self.element_count(),
                self.data.len()
            )));
        }
        Ok(())
    }

    /// All values widened to f32. Exact for every dtype.
    pub fn values_f32(&self) -> Vec<f32> {
        match &self.data {
            TensorData::F16(v) => v.iter().map(|x| x.to_f32()).collect(),
            TensorData::F32(v) => v.clone(),
            TensorData::U8(v) => v.iter().map(|&x| f32::from(x)).collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&TENSOR_MAGIC);
        out.push(TENSOR_VERSION);
        out.push(self.dtype().code());
        out.push(self.dims.len() as u8);
        out.push(0);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncation {
                expected: PROLOGUE_LEN,
                actual: bytes.len(),
            });
        }
        if bytes[..4] != TENSOR_MAGIC {
            return Err(Error::Format(format!("bad magic {:02x?}", &bytes[..4])));
        }
        if bytes.len() < PROLOGUE_LEN {
            return Err(Error::Truncation {
                expected: PROLOGUE_LEN,
                actual: bytes.len(),
            });
        }
        if bytes[4] != TENSOR_VERSION {
            return Err(Error::Format(format!("unsupported version {}", bytes[4])));
        }
        let dtype = DType::from_code(bytes[5])?;
        let rank = bytes[6] as usize;
        if !(2..=3).contains(&rank) {
            return Err(Error::Format(format!("rank {rank} not supported")));
        }
        if bytes[7] != 0 {
            return Err(Error::Format("nonzero header padding".into()));
        }
        let dims_end = PROLOGUE_LEN + 4 * rank;
        if bytes.len() < dims_end {
            return Err(Error::Truncation {
                expected: dims_end,
                actual: bytes.len(),
            });
        }
        let dims: Vec<u32> = bytes[PROLOGUE_LEN..dims_end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .and_then(|n| n.checked_mul(dtype.size()).map(|b| (n, b)));
        let Some((count, payload_len)) = count else {
            return Err(Error::Format(format!("dims {dims:?} overflow")));
        };
        let expected = dims_end + payload_len;
        if bytes.len() < expected {
            return Err(Error::Truncation {
                expected,
                actual: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                bytes.len() - expected
            )));
        }
        let payload = &bytes[dims_end..];
        let data = match dtype {
            DType::F16 => TensorData::F16(
                payload
                    .chunks_exact(2)
                    .map(|c| f16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            ),
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            DType::U8 => TensorData::U8(payload.to_vec()),
        };
        debug_assert_eq!(data.len(), count);
        Ok(TensorFile { dims, data })
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorFile> {
    let bytes = fs::read(path)?;
    TensorFile::from_bytes(&bytes)
}

pub fn write_tensor(t: &TensorFile, path: impl AsRef<Path>) -> Result<()> {
    let bytes = t.to_bytes()?;
    fs::write(path, bytes)?;
    Ok(())
}

/// One confidence record per mask slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRecord {
    pub mask_index: u32,
    pub confidence: f32,
}

/// Confidence sidecar: one `index confidence` pair per line. Blank lines and
/// lines starting with `#` are ignored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSidecar {
    pub records: Vec<ScoreRecord>,
}

impl ScoreSidecar {
    pub fn from_confidences(confidences: &[f32]) -> Self {
        ScoreSidecar {
            records: confidences
                .iter()
                .enumerate()
                .map(|(i, &c)| ScoreRecord {
                    mask_index: i as u32,
                    confidence: c,
                })
                .collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let (Some(idx), Some(conf), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(Error::Format(format!(
                    "sidecar line {}: expected `index confidence`",
                    lineno + 1
                )));
            };
            let mask_index: u32 = idx
                .parse()
                .map_err(|_| Error::Format(format!("sidecar line {}: bad index {idx:?}", lineno + 1)))?;
            let confidence: f32 = conf
                .parse()
                .map_err(|_| Error::Format(format!("sidecar line {}: bad confidence {conf:?}", lineno + 1)))?;
            if !(0.0..=1.0).contains(&confidence) {
                return Err(Error::Format(format!(
                    "sidecar line {}: confidence {confidence} outside [0, 1]",
                    lineno + 1
                )));
            }
            records.push(ScoreRecord { mask_index, confidence });
        }
        Ok(ScoreSidecar { records })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# index confidence\n");
        for r in &self.records {
            let _ = writeln!(out, "{} {}", r.mask_index, r.confidence);
        }
        out
    }

    /// Confidences indexed by mask slice, checking that every slice in
    /// `0..mask_count` has exactly one record.
    pub fn confidences_for(&self, mask_count: usize) -> Result<Vec<f32>> {
        let mut out: Vec<Option<f32>> = vec![None; mask_count];
        for r in &self.records {
            let slot = out.get_mut(r.mask_index as usize).ok_or_else(|| {
                Error::Format(format!(
                    "sidecar references mask {} but tensor has {mask_count}",
                    r.mask_index
                ))
            })?;
            if slot.replace(r.confidence).is_some() {
                return Err(Error::Format(format!(
                    "duplicate sidecar record for mask {}",
                    r.mask_index
                )));
            }
        }
        out.into_iter()
            .enumerate()
            .map(|(i, c)| c.ok_or_else(|| Error::Format(format!("no sidecar record for mask {i}"))))
            .collect()
    }
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<ScoreSidecar> {
    ScoreSidecar::parse(&fs::read_to_string(path)?)
}

pub fn write_sidecar(sc: &ScoreSidecar, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, sc.to_text())?;
    Ok(())
}
