//! Binary checkpoint format.
//!
//! ```text
//! 0..8    magic  "FLOWCKPT"
//! 8..12   version (u32 LE) = 1
//! 12..16  dimension n (u32 LE)
//! 16      layer count (u8)
//! per layer:
//!         kind tag (u8): 0 actnorm, 1 coupling, 2 mixing
//!         payload length (u32 LE), then that many f64 LE values
//! ```
//!
//! Payloads, in order:
//! - actnorm: `scale[n], bias[n], epsilon`
//! - coupling: `flip (0|1), hidden, conditioner weights` (w1, b1, w2, b2, w3, b3)
//! - mixing: `variant (0 permutation | 1 LU), perm[n]`, then for LU the strict
//!   lower part of `L` and the upper part of `U`, both row-major.

use std::path::Path;

use thiserror::Error;

use super::layers::{is_permutation, ActNorm, Bijector, Coupling, Layer, LuMixing, Mixing};
use super::mlp::Mlp;
use super::FlowStack;

pub const MAGIC: &[u8; 8] = b"FLOWCKPT";
pub const VERSION: u32 = 1;

const TAG_ACTNORM: u8 = 0;
const TAG_COUPLING: u8 = 1;
const TAG_MIXING: u8 = 2;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: not a flow checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("layer {layer}: payload does not match dimension {dim}")]
    DimensionMismatch { layer: usize, dim: usize },
    #[error("layer {layer}: unknown kind tag {tag}")]
    UnknownKind { layer: usize, tag: u8 },
    #[error("{0} trailing bytes after last layer")]
    TrailingBytes(usize),
    #[error("too many layers for the format: {0}")]
    TooManyLayers(usize),
}

fn payload(layer: &Layer) -> (u8, Vec<f64>) {
    match layer {
        Layer::ActNorm(a) => {
            let mut p = a.params();
            p.push(a.epsilon);
            (TAG_ACTNORM, p)
        }
        Layer::Coupling(c) => {
            let mut p = vec![if c.flip { 1.0 } else { 0.0 }, c.net.hidden as f64];
            p.extend(c.params());
            (TAG_COUPLING, p)
        }
        Layer::Mixing(m) => {
            let (variant, perm) = match m {
                Mixing::Permutation(p) => (0.0, p),
                Mixing::Lu(lu) => (1.0, &lu.perm),
            };
            let mut p = vec![variant];
            p.extend(perm.iter().map(|&i| i as f64));
            p.extend(m.params());
            (TAG_MIXING, p)
        }
    }
}

pub fn to_bytes(flow: &FlowStack) -> Result<Vec<u8>, CheckpointError> {
    let layers = flow.layers();
    let count = u8::try_from(layers.len()).map_err(|_| CheckpointError::TooManyLayers(layers.len()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(flow.dim() as u32).to_le_bytes());
    out.push(count);
    for layer in layers {
        let (tag, p) = payload(layer);
        out.push(tag);
        out.extend_from_slice(&(p.len() as u32).to_le_bytes());
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + k > self.buf.len() {
            return Err(CheckpointError::Truncated { offset: self.buf.len() });
        }
        let s = &self.buf[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn as_index(v: f64, bound: usize) -> Option<usize> {
    (v >= 0.0 && v.fract() == 0.0 && (v as usize) < bound).then_some(v as usize)
}

fn decode_layer(tag: u8, p: &[f64], n: usize, layer: usize) -> Result<Layer, CheckpointError> {
    let mismatch = CheckpointError::DimensionMismatch { layer, dim: n };
    match tag {
        TAG_ACTNORM => {
            if p.len() != 2 * n + 1 {
                return Err(mismatch);
            }
            Ok(Layer::ActNorm(ActNorm::new(
                p[..n].to_vec(),
                p[n..2 * n].to_vec(),
                p[2 * n],
            )))
        }
        TAG_COUPLING => {
            if p.len() < 2 || n < 2 {
                return Err(mismatch);
            }
            let flip = match p[0] {
                0.0 => false,
                1.0 => true,
                _ => return Err(mismatch),
            };
            let hidden = as_index(p[1], usize::MAX)
                .filter(|&h| h > 0)
                .ok_or(CheckpointError::DimensionMismatch { layer, dim: n })?;
            let first = n / 2;
            let (passive, active) = if flip { (n - first, first) } else { (first, n - first) };
            if p.len() - 2 != Mlp::count_for(passive, hidden, 2 * active) {
                return Err(mismatch);
            }
            Ok(Layer::Coupling(Coupling {
                dim: n,
                flip,
                net: Mlp::from_params(passive, hidden, 2 * active, &p[2..]),
            }))
        }
        TAG_MIXING => {
            if p.len() < 1 + n {
                return Err(mismatch);
            }
            let perm: Option<Vec<usize>> = p[1..=n].iter().map(|&v| as_index(v, n)).collect();
            let perm = perm
                .filter(|q| is_permutation(q))
                .ok_or(CheckpointError::DimensionMismatch { layer, dim: n })?;
            let rest = &p[1 + n..];
            match p[0] {
                v if v == 0.0 && rest.is_empty() => Ok(Layer::Mixing(Mixing::Permutation(perm))),
                v if v == 1.0 && rest.len() == n * n => {
                    let mut m = Mixing::Lu(LuMixing::identity(perm));
                    m.set_params(rest);
                    Ok(Layer::Mixing(m))
                }
                _ => Err(mismatch),
            }
        }
        _ => Err(CheckpointError::UnknownKind { layer, tag }),
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<FlowStack, CheckpointError> {
    let mut r = Reader { buf, pos: 0 };
    if buf.len() >= 8 && &buf[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if r.take(8)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let n = r.u32()? as usize;
    let count = r.u8()? as usize;
    let mut layers = Vec::with_capacity(count);
    for layer in 0..count {
        let tag = r.u8()?;
        let len = r.u32()? as usize;
        if len > (buf.len() - r.pos) / 8 {
            return Err(CheckpointError::Truncated { offset: buf.len() });
        }
        let p = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        layers.push(decode_layer(tag, &p, n, layer)?);
    }
    if r.pos != buf.len() {
        return Err(CheckpointError::TrailingBytes(buf.len() - r.pos));
    }
    FlowStack::from_layers(n, layers).map_err(|_| CheckpointError::DimensionMismatch { layer: 0, dim: n })
}

pub fn save(flow: &FlowStack, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    std::fs::write(path, to_bytes(flow)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<FlowStack, CheckpointError> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{FlowConfig, MixingKind};
    use crate::numerics::RngStream;

    fn sample() -> FlowStack {
        FlowStack::random(
            &FlowConfig::new(5, 2).with_mixing(MixingKind::Lu),
            0.3,
            &mut RngStream::new(12, 0),
        )
    }

    #[test]
    fn round_trip_is_bitwise() {
        let g = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ckpt");
        save(&g, &path).unwrap();
        let h = load(&path).unwrap();
        assert_eq!(g, h);
        let z = [0.1, -0.4, 0.9, 1.3, -2.0];
        let a = g.forward(&z).unwrap().output;
        let b = h.forward(&z).unwrap().output;
        assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn header_layout() {
        let bytes = to_bytes(&FlowStack::empty(7)).unwrap();
        assert_eq!(&bytes[..8], b"FLOWCKPT");
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &[7, 0, 0, 0]);
        assert_eq!(bytes[16], 0);
        assert_eq!(bytes.len(), 17);
    }

    #[test]
    fn distinct_failures() {
        let mut bytes = to_bytes(&sample()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(CheckpointError::BadMagic)));
        let mut bad = bytes.clone();
        bad[8] = 2;
        assert!(matches!(from_bytes(&bad), Err(CheckpointError::UnsupportedVersion(2))));
        assert!(matches!(
            from_bytes(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Truncated { .. })
        ));
        assert!(matches!(
            from_bytes(&bytes[..5]),
            Err(CheckpointError::Truncated { .. })
        ));
        // claim a different dimension
        bytes[12] = 4;
        assert!(matches!(
            from_bytes(&bytes),
            Err(CheckpointError::DimensionMismatch { layer: 0, .. })
        ));
    }
}
