//! `ATOK` token frames and the framed TCP transport that carries them.
//!
//! Frame layout, little-endian, no padding:
//!
//! ```text
//! offset    size   field
//! 0         4      magic "ATOK"
//! 4         1      version (1)
//! 5         1      dtype (0 = f16, 1 = f32)
//! 6         4      dim
//! 10        4      count
//! 14        P      payload, count × dim values
//! 14+P      4      meta_len
//! 18+P      M      meta, UTF-8 JSON
//! ```

mod transport;

use std::fs;
use std::path::Path;

use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::object_merge::{CompressedTokenSet, Origin, TokenMeta};
use crate::tensor_io::DType;

pub use transport::{
    read_message, send, serve, write_message, Client, SendOptions, SendReport, Server, ServerHandle, ServerStats, ACK,
    MAX_BODY_LEN, NAK,
};

pub const FRAME_MAGIC: [u8; 4] = *b"ATOK";
pub const FRAME_VERSION: u8 = 1;
/// Fixed header bytes: 14 before the payload plus the 4-byte meta length.
pub const FRAME_OVERHEAD: usize = 18;
const PAYLOAD_OFFSET: usize = 14;

#[derive(Debug, Serialize, Deserialize)]
struct FrameMeta {
    origin: Origin,
    residual_included: bool,
    tokens: Vec<TokenMeta>,
}

fn wire_dtype(dtype: DType) -> Result<u8> {
    match dtype {
        DType::F16 | DType::F32 => Ok(dtype.code()),
        DType::U8 => Err(Error::Encoding("token frames carry f16 or f32 only".into())),
    }
}

/// Serialises a token set. f16 conversion rounds to nearest, ties to even.
pub fn pack(cts: &CompressedTokenSet, dtype: DType) -> Result<Vec<u8>> {
    let code = wire_dtype(dtype)?;
    cts.validate().map_err(|e| Error::Encoding(e.to_string()))?;
    if let Some(i) = cts.tokens.iter().position(|v| !v.is_finite()) {
        return Err(Error::Encoding(format!(
            "token {} channel {} is not finite",
            i / cts.dim.max(1),
            i % cts.dim.max(1)
        )));
    }
    let meta = serde_json::to_vec(&FrameMeta {
        origin: cts.origin,
        residual_included: cts.residual_included,
        tokens: cts.meta.clone(),
    })
    .map_err(|e| Error::Encoding(e.to_string()))?;

    let payload_len = cts.tokens.len() * dtype.size();
    let mut out = Vec::with_capacity(FRAME_OVERHEAD + payload_len + meta.len());
    out.extend_from_slice(&FRAME_MAGIC);
    out.push(FRAME_VERSION);
    out.push(code);
    out.extend_from_slice(&(cts.dim as u32).to_le_bytes());
    out.extend_from_slice(&(cts.len() as u32).to_le_bytes());
    match dtype {
        DType::F16 => {
            for (i, &v) in cts.tokens.iter().enumerate() {
                let h = f16::from_f32(v);
                if h.is_infinite() {
                    return Err(Error::Encoding(format!("value {v} at element {i} overflows f16")));
                }
                out.extend_from_slice(&h.to_le_bytes());
            }
        }
        _ => cts.tokens.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::frame(bytes.len(), format!("truncated before u32 at offset {at}")))
}

/// Parses and validates a frame. Returns the token set and the dtype it was
/// carried in.
pub fn unpack_with_dtype(bytes: &[u8]) -> Result<(CompressedTokenSet, DType)> {
    if bytes.len() < 4 || bytes[..4] != FRAME_MAGIC {
        return Err(Error::frame(0, "bad magic"));
    }
    match bytes.get(4) {
        Some(&FRAME_VERSION) => {}
        Some(v) => return Err(Error::frame(4, format!("unsupported version {v}"))),
        None => return Err(Error::frame(4, "truncated header")),
    }
    let dtype = match bytes.get(5) {
        Some(0) => DType::F16,
        Some(1) => DType::F32,
        Some(c) => return Err(Error::frame(5, format!("unsupported dtype {c}"))),
        None => return Err(Error::frame(5, "truncated header")),
    };
    let dim = read_u32(bytes, 6)? as usize;
    let count = read_u32(bytes, 10)? as usize;
    let payload_len = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(dtype.size()))
        .filter(|&n| n <= bytes.len())
        .ok_or_else(|| Error::frame(PAYLOAD_OFFSET, "payload larger than frame"))?;
    let meta_len_at = PAYLOAD_OFFSET + payload_len;
    let meta_len = read_u32(bytes, meta_len_at)? as usize;
    let meta_at = meta_len_at + 4;
    let end = meta_at + meta_len;
    if bytes.len() < end {
        return Err(Error::frame(
            bytes.len(),
            format!("frame truncated, expected {end} bytes"),
        ));
    }
    if bytes.len() > end {
        return Err(Error::frame(end, "trailing bytes after meta"));
    }
    let payload = &bytes[PAYLOAD_OFFSET..meta_len_at];
    let tokens: Vec<f32> = match dtype {
        DType::F16 => payload
            .chunks_exact(2)
            .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32())
            .collect(),
        _ => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    };
    if let Some(i) = tokens.iter().position(|v| !v.is_finite()) {
        return Err(Error::frame(PAYLOAD_OFFSET + i * dtype.size(), "non-finite value"));
    }
    let meta: FrameMeta =
        serde_json::from_slice(&bytes[meta_at..end]).map_err(|e| Error::frame(meta_at, format!("bad meta: {e}")))?;
    if meta.tokens.len() != count {
        return Err(Error::frame(
            meta_at,
            format!("meta lists {} tokens, header says {count}", meta.tokens.len()),
        ));
    }
    let cts = CompressedTokenSet {
        dim,
        tokens,
        meta: meta.tokens,
        origin: meta.origin,
        residual_included: meta.residual_included,
    };
    cts.validate().map_err(|e| Error::frame(meta_at, e.to_string()))?;
    Ok((cts, dtype))
}

pub fn unpack(bytes: &[u8]) -> Result<CompressedTokenSet> {
    unpack_with_dtype(bytes).map(|(cts, _)| cts)
}

pub fn write_tok_file(cts: &CompressedTokenSet, dtype: DType, path: impl AsRef<Path>) -> Result<usize> {
    let frame = pack(cts, dtype)?;
    fs::write(path, &frame)?;
    Ok(frame.len())
}

pub fn read_tok_file(path: impl AsRef<Path>) -> Result<CompressedTokenSet> {
    unpack(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(k: usize, d: usize) -> CompressedTokenSet {
        CompressedTokenSet {
            dim: d,
            tokens: (0..k * d).map(|i| (i as f32 * 0.37).sin() * 3.0).collect(),
            meta: (0..k)
                .map(|i| TokenMeta {
                    source: Some(i as u32),
                    area: 100 + i as u64,
                })
                .collect(),
            origin: Origin {
                image_height: 336,
                image_width: 336,
                grid_height: 24,
                grid_width: 24,
            },
            residual_included: false,
        }
    }

    #[test]
    fn payload_size_matches_token_bytes() {
        let cts = sample(59, 1024);
        let frame = pack(&cts, DType::F16).unwrap();
        let meta_len = read_u32(&frame, 14 + 120_832).unwrap() as usize;
        assert_eq!(frame.len(), FRAME_OVERHEAD + 120_832 + meta_len);
    }

    #[test]
    fn f32_roundtrip_exact_and_fixpoint() {
        let cts = sample(5, 7);
        let frame = pack(&cts, DType::F32).unwrap();
        assert_eq!(unpack(&frame).unwrap(), cts);
        let f16_frame = pack(&cts, DType::F16).unwrap();
        assert_eq!(pack(&unpack(&f16_frame).unwrap(), DType::F16).unwrap(), f16_frame);
    }

    #[test]
    fn empty_frame() {
        let cts = sample(0, 16);
        let frame = pack(&cts, DType::F16).unwrap();
        let back = unpack(&frame).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim, 16);
    }

    #[test]
    fn header_bytes() {
        let frame = pack(&sample(2, 3), DType::F32).unwrap();
        assert_eq!(&frame[..6], b"ATOK\x01\x01");
        assert_eq!(&frame[6..14], &[3, 0, 0, 0, 2, 0, 0, 0]);
    }

    #[test]
    fn non_finite_rejected() {
        let mut cts = sample(1, 2);
        cts.tokens[1] = f32::NAN;
        assert!(matches!(pack(&cts, DType::F32), Err(Error::Encoding(_))));
        cts.tokens[1] = 1e6;
        assert!(matches!(pack(&cts, DType::F16), Err(Error::Encoding(_))));
        assert!(pack(&cts, DType::F32).is_ok());
    }

    #[test]
    fn malformed_frames_report_offsets() {
        let frame = pack(&sample(3, 4), DType::F16).unwrap();
        let at = |bytes: &[u8]| match unpack(bytes) {
            Err(Error::Frame { offset, .. }) => offset,
            other => panic!("expected frame error, got {other:?}"),
        };
        let mut bad = frame.clone();
        bad[0] = b'B';
        assert_eq!(at(&bad), 0);
        let mut bad = frame.clone();
        bad[4] = 9;
        assert_eq!(at(&bad), 4);
        let mut bad = frame.clone();
        bad[5] = 7;
        assert_eq!(at(&bad), 5);
        // truncated mid-payload
        assert!(at(&frame[..20]) > 0);
        let mut long = frame.clone();
        long.push(0);
        assert_eq!(at(&long), frame.len());
    }
}
