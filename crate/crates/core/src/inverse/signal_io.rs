//! Flat signal files: magic `FPVEC\0\0\0`, length `n` as u64 LE, then `n`
//! f64 LE values.

use std::path::Path;

use super::InverseError;

pub const SIGNAL_MAGIC: &[u8; 8] = b"FPVEC\0\0\0";

pub fn encode_signal(x: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * x.len());
    out.extend_from_slice(SIGNAL_MAGIC);
    out.extend_from_slice(&(x.len() as u64).to_le_bytes());
    for v in x {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_signal(buf: &[u8]) -> Result<Vec<f64>, InverseError> {
    if buf.len() < 16 || &buf[..8] != SIGNAL_MAGIC {
        return Err(InverseError::Signal("missing FPVEC header"));
    }
    let n = u64::from_le_bytes(buf[8..16].try_into().unwrap());
    let body = &buf[16..];
    if body.len() as u64 != n.saturating_mul(8) {
        return Err(InverseError::Signal("payload length does not match header"));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_signal(path: impl AsRef<Path>, x: &[f64]) -> std::io::Result<()> {
    std::fs::write(path, encode_signal(x))
}

pub fn read_signal(path: impl AsRef<Path>) -> Result<Vec<f64>, InverseError> {
    let buf = std::fs::read(path).map_err(|e| InverseError::Io(e.to_string()))?;
    decode_signal(&buf)
}
