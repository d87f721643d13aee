//! ACTB container, little-endian throughout:
//!
//! | bytes        | content                                  |
//! |--------------|------------------------------------------|
//! | 0..4         | magic `ACTB`                             |
//! | 4..8         | version, u32 (= 1)                       |
//! | 8..16        | header length `H`, u64                   |
//! | 16..16+H     | UTF-8 JSON header                        |
//! | 16+H..       | f32 payload, row-major, `4 * numel` bytes |

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const ACTB_MAGIC: &[u8; 4] = b"ACTB";
pub const ACTB_VERSION: u32 = 1;
const PREFIX: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub row_major: bool,
    #[serde(default)]
    pub axes: Vec<String>,
    #[serde(default)]
    pub metadata: BTreeMap<String, Value>,
}

impl TensorHeader {
    pub fn new(shape: Vec<usize>, axes: &[&str]) -> Self {
        TensorHeader {
            dtype: "f32".into(),
            shape,
            row_major: true,
            axes: axes.iter().map(|s| s.to_string()).collect(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dtype != "f32" {
            return Err(Error::format(format!("unsupported dtype {:?}", self.dtype)));
        }
        if !self.row_major {
            return Err(Error::format("unsupported layout: payload must be row-major"));
        }
        if self.shape.is_empty() || self.shape.iter().any(|&s| s == 0) {
            return Err(Error::format(format!("shape entries must be positive, got {:?}", self.shape)));
        }
        if !self.axes.is_empty() && self.axes.len() != self.shape.len() {
            return Err(Error::format(format!(
                "{} axis names for a rank-{} tensor",
                self.axes.len(),
                self.shape.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub header: TensorHeader,
    pub data: Vec<f32>,
}

impl TensorFile {
    pub fn new(header: TensorHeader, data: Vec<f32>) -> Result<Self> {
        let t = TensorFile { header, data };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        self.header.validate()?;
        if self.data.len() != self.header.numel() {
            return Err(Error::format("payload length mismatch"));
        }
        Ok(())
    }

    /// Bitwise equality, distinguishing NaN payloads and signed zeros.
    pub fn bit_eq(&self, other: &TensorFile) -> bool {
        self.header == other.header
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub fn encode(t: &TensorFile) -> Result<Vec<u8>> {
    t.validate()?;
    let header = serde_json::to_vec(&t.header)?;
    let mut out = Vec::with_capacity(PREFIX + header.len() + 4 * t.data.len());
    out.extend_from_slice(ACTB_MAGIC);
    out.extend_from_slice(&ACTB_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses magic, version and JSON header; returns the header and the payload offset.
fn decode_prefix(bytes: &[u8]) -> Result<(TensorHeader, usize)> {
    if bytes.len() < 4 || &bytes[0..4] != ACTB_MAGIC {
        return Err(Error::format("bad magic"));
    }
    if bytes.len() < PREFIX {
        return Err(Error::format("truncated header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != ACTB_VERSION {
        return Err(Error::format(format!("unsupported version {version}")));
    }
    let h = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let end = (PREFIX as u64)
        .checked_add(h)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| Error::format("truncated header"))? as usize;
    let header: TensorHeader = serde_json::from_slice(&bytes[PREFIX..end])
        .map_err(|e| Error::format(format!("malformed JSON header: {e}")))?;
    header.validate()?;
    Ok((header, end))
}

fn check_payload_len(header: &TensorHeader, payload: u64) -> Result<()> {
    let expected = 4 * header.numel() as u64;
    if payload < expected {
        return Err(Error::format("truncated payload"));
    }
    if payload > expected {
        return Err(Error::format("payload length mismatch"));
    }
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<TensorFile> {
    let (header, start) = decode_prefix(bytes)?;
    let payload = &bytes[start..];
    check_payload_len(&header, payload.len() as u64)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(TensorFile { header, data })
}

pub fn write_tensor(path: impl AsRef<Path>, t: &TensorFile) -> Result<()> {
    let bytes = encode(t)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorFile> {
    decode(&fs::read(path)?)
}

/// Reads only the header, checking the payload length against the file size.
pub fn read_header(path: impl AsRef<Path>) -> Result<TensorHeader> {
    let mut f = fs::File::open(&path)?;
    let total = f.metadata()?.len();
    let mut prefix = [0u8; PREFIX];
    let got = read_up_to(&mut f, &mut prefix)?;
    if got < 4 || &prefix[0..4] != ACTB_MAGIC {
        return Err(Error::format("bad magic"));
    }
    if got < PREFIX {
        return Err(Error::format("truncated header"));
    }
    let h = u64::from_le_bytes(prefix[8..16].try_into().unwrap());
    if PREFIX as u64 + h > total {
        return Err(Error::format("truncated header"));
    }
    let mut buf = prefix.to_vec();
    buf.resize(PREFIX + h as usize, 0);
    f.read_exact(&mut buf[PREFIX..])?;
    let (header, start) = decode_prefix(&buf)?;
    check_payload_len(&header, total - start as u64)?;
    Ok(header)
}

fn read_up_to(f: &mut fs::File, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match f.read(&mut buf[n..])? {
            0 => break,
            k => n += k,
        }
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t22() -> TensorFile {
        TensorFile::new(TensorHeader::new(vec![2, 2], &["row", "col"]), vec![1.0, 0.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn layout_is_byte_exact() {
        let bytes = encode(&t22()).unwrap();
        assert_eq!(&bytes[0..4], b"ACTB");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let h = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 16 + h + 16);
        assert_eq!(&bytes[16 + h..16 + h + 4], &1.0f32.to_le_bytes());
        assert!(decode(&bytes).unwrap().bit_eq(&t22()));
    }

    #[test]
    fn length_errors() {
        let err = TensorFile::new(TensorHeader::new(vec![3, 2], &[]), vec![0.0; 5]).unwrap_err();
        assert_eq!(err.to_string(), "payload length mismatch");

        let t = TensorFile::new(TensorHeader::new(vec![4], &[]), vec![0.0; 4]).unwrap();
        let mut bytes = encode(&t).unwrap();
        bytes.truncate(bytes.len() - 4);
        assert_eq!(decode(&bytes).unwrap_err().to_string(), "truncated payload");
        bytes.extend_from_slice(&[0; 8]);
        assert_eq!(decode(&bytes).unwrap_err().to_string(), "payload length mismatch");
    }

    #[test]
    fn header_errors() {
        let mut bytes = encode(&t22()).unwrap();
        bytes[0..4].copy_from_slice(b"XXXX");
        assert_eq!(decode(&bytes).unwrap_err().to_string(), "bad magic");

        let mut bytes = encode(&t22()).unwrap();
        bytes[4] = 2;
        assert!(decode(&bytes).unwrap_err().to_string().contains("unsupported version"));

        let mut bytes = encode(&t22()).unwrap();
        bytes[16] = b'[';
        assert!(decode(&bytes).unwrap_err().to_string().starts_with("malformed JSON header"));
    }

    #[test]
    fn rejects_non_f32_dtype() {
        let mut h = TensorHeader::new(vec![1], &[]);
        h.dtype = "f16".into();
        assert!(TensorFile::new(h, vec![0.0]).is_err());
    }
}
