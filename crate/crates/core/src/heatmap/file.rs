//! On-disk heatmap stacks produced by an external detector.
//!
//! Binary layout, little-endian:
//!
//! ```text
//! "DVP1"                 4 bytes
//! resolution R           u32
//! scale count S          u32
//! scales                 S x f64
//! channel count C        u32   (2: first and second vanishing point)
//! payload                C x S x R x R f32, channel-major, then scale, then row-major
//! ```
//!
//! Files ending in `.json` use the same structure as a JSON object
//! `{"resolution", "scales", "channels": [[[f32; R*R]; S]; C]}`.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CodecError, Heatmap, ScaleSet};

pub const MAGIC: &[u8; 4] = b"DVP1";

#[derive(Debug, Error)]
pub enum HeatmapFileError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("truncated heatmap file: needed {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Heatmaps for every (vanishing point, scale) of one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapSet {
    pub resolution: usize,
    pub scales: ScaleSet,
    /// `channels[c][s]`.
    pub channels: Vec<Vec<Heatmap>>,
}

#[derive(Serialize, Deserialize)]
struct JsonHeatmapSet {
    resolution: usize,
    scales: Vec<f64>,
    channels: Vec<Vec<Vec<f32>>>,
}

impl HeatmapSet {
    pub fn new(resolution: usize, scales: ScaleSet, channels: Vec<Vec<Heatmap>>) -> Result<Self, CodecError> {
        for ch in &channels {
            if ch.len() != scales.len() {
                return Err(CodecError::InvalidHeatmap(format!(
                    "channel has {} heatmaps for {} scales",
                    ch.len(),
                    scales.len()
                )));
            }
            for (h, &s) in ch.iter().zip(scales.as_slice()) {
                if h.resolution() != resolution || h.scale() != s {
                    return Err(CodecError::InvalidHeatmap(format!(
                        "heatmap {}x{} at scale {} does not match header",
                        h.resolution(),
                        h.resolution(),
                        h.scale()
                    )));
                }
            }
        }
        Ok(Self { resolution, scales, channels })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let r2 = self.resolution * self.resolution;
        let mut out = Vec::with_capacity(16 + 8 * self.scales.len() + 4 * r2 * self.scales.len() * self.channels.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.resolution as u32).to_le_bytes());
        out.extend_from_slice(&(self.scales.len() as u32).to_le_bytes());
        for s in self.scales.as_slice() {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.extend_from_slice(&(self.channels.len() as u32).to_le_bytes());
        for ch in &self.channels {
            for h in ch {
                for v in h.values() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HeatmapFileError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
        if &magic != MAGIC {
            return Err(HeatmapFileError::BadMagic(magic));
        }
        let resolution = cur.u32()? as usize;
        let n_scales = cur.u32()? as usize;
        let scales = (0..n_scales).map(|_| cur.f64()).collect::<Result<Vec<_>, _>>()?;
        let scales = ScaleSet::new(scales)?;
        let n_channels = cur.u32()? as usize;
        let r2 = resolution * resolution;
        // size check before allocating
        let needed = cur.pos + 4 * r2 * n_scales * n_channels;
        if bytes.len() < needed {
            return Err(HeatmapFileError::Truncated { needed, have: bytes.len() });
        }
        let mut channels = Vec::with_capacity(n_channels);
        for _ in 0..n_channels {
            let mut ch = Vec::with_capacity(n_scales);
            for &s in scales.as_slice() {
                let values = (0..r2).map(|_| cur.f32()).collect::<Result<Vec<_>, _>>()?;
                ch.push(Heatmap::from_values(resolution, s, values)?);
            }
            channels.push(ch);
        }
        if cur.pos != bytes.len() {
            return Err(HeatmapFileError::TrailingBytes(bytes.len() - cur.pos));
        }
        Ok(Self::new(resolution, scales, channels)?)
    }

    pub fn to_json(&self) -> Result<String, HeatmapFileError> {
        let j = JsonHeatmapSet {
            resolution: self.resolution,
            scales: self.scales.as_slice().to_vec(),
            channels: self.channels.iter().map(|ch| ch.iter().map(|h| h.values().to_vec()).collect()).collect(),
        };
        Ok(serde_json::to_string(&j)?)
    }

    pub fn from_json(s: &str) -> Result<Self, HeatmapFileError> {
        let j: JsonHeatmapSet = serde_json::from_str(s)?;
        let scales = ScaleSet::new(j.scales)?;
        let channels = j
            .channels
            .into_iter()
            .map(|ch| {
                ch.into_iter()
                    .zip(scales.as_slice())
                    .map(|(values, &s)| Heatmap::from_values(j.resolution, s, values))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(j.resolution, scales, channels)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], HeatmapFileError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(HeatmapFileError::Truncated { needed: end, have: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, HeatmapFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, HeatmapFileError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, HeatmapFileError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

pub fn read_heatmap_set(path: &Path) -> Result<HeatmapSet, HeatmapFileError> {
    if is_json(path) {
        HeatmapSet::from_json(&fs::read_to_string(path)?)
    } else {
        HeatmapSet::from_bytes(&fs::read(path)?)
    }
}

pub fn write_heatmap_set(path: &Path, set: &HeatmapSet) -> Result<(), HeatmapFileError> {
    if is_json(path) {
        fs::write(path, set.to_json()?)?;
    } else {
        fs::write(path, set.to_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::encode_vp_all;
    use crate::projective::HomogeneousPoint2;

    fn sample() -> HeatmapSet {
        let scales = ScaleSet::default();
        let a = encode_vp_all(HomogeneousPoint2::new(12.0, -3.0, 1.0), &scales, 16, 1.0).unwrap();
        let b = encode_vp_all(HomogeneousPoint2::new(-0.4, 7.0, 1.0), &scales, 16, 1.0).unwrap();
        HeatmapSet::new(16, scales, vec![a, b]).unwrap()
    }

    #[test]
    fn binary_header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"DVP1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 16);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
        assert_eq!(f64::from_le_bytes(bytes[12..20].try_into().unwrap()), 0.03);
        assert_eq!(f64::from_le_bytes(bytes[36..44].try_into().unwrap()), 1.0);
        assert_eq!(u32::from_le_bytes(bytes[44..48].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 48 + 2 * 4 * 16 * 16 * 4);
        // channel-major, scale-major, row-major payload
        let set = sample();
        let h = &set.channels[1][2];
        let off = 48 + 4 * (16 * 16 * (4 + 2) + 3 * 16 + 5);
        assert_eq!(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()), h.get(3, 5));
    }

    #[test]
    fn binary_and_json_agree() {
        let set = sample();
        assert_eq!(HeatmapSet::from_bytes(&set.to_bytes()).unwrap(), set);
        assert_eq!(HeatmapSet::from_json(&set.to_json().unwrap()).unwrap(), set);
    }

    #[test]
    fn malformed_files_rejected() {
        let mut bytes = sample().to_bytes();
        assert!(matches!(HeatmapSet::from_bytes(&bytes[..bytes.len() - 1]), Err(HeatmapFileError::Truncated { .. })));
        bytes.push(0);
        assert!(matches!(HeatmapSet::from_bytes(&bytes), Err(HeatmapFileError::TrailingBytes(1))));
        bytes[0] = b'X';
        assert!(matches!(HeatmapSet::from_bytes(&bytes), Err(HeatmapFileError::BadMagic(_))));
    }

    #[test]
    fn files_round_trip_by_extension() {
        let dir = tempfile::tempdir().unwrap();
        let set = sample();
        for name in ["a.dvp", "b.json"] {
            let p = dir.path().join(name);
            write_heatmap_set(&p, &set).unwrap();
            assert_eq!(read_heatmap_set(&p).unwrap(), set);
        }
        assert!(fs::read_to_string(dir.path().join("b.json")).unwrap().starts_with('{'));
    }
}
