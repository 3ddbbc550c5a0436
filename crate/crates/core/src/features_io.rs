//! `DBRNFT01` feature files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   8 bytes  "DBRNFT01"
//! count   u32
//! count x { w: u32, h: u32, d: u32, data: w*h*d f32, row-major }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

pub const MAGIC: &[u8; 8] = b"DBRNFT01";

pub fn encode_features(maps: &[FeatureMap]) -> Result<Vec<u8>> {
    let count = u32::try_from(maps.len())
        .map_err(|_| Error::Parameter(format!("{} maps exceed the u32 count", maps.len())))?;
    let mut out = Vec::with_capacity(12 + maps.iter().map(|m| 12 + 4 * m.data().len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    for (n, map) in maps.iter().enumerate() {
        for extent in [map.width(), map.height(), map.dim()] {
            let extent = u32::try_from(extent)
                .map_err(|_| Error::Parameter(format!("map {n} extent {extent} exceeds u32")))?;
            out.extend_from_slice(&extent.to_le_bytes());
        }
        for &v in map.data() {
            let single = v as f32;
            if !single.is_finite() {
                return Err(Error::Format {
                    offset: out.len() as u64,
                    reason: format!("map {n} value {v} is not representable as f32"),
                });
            }
            out.extend_from_slice(&single.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format {
                offset: self.pos as u64,
                reason: format!("truncated while reading {what}"),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_features(bytes: &[u8]) -> Result<Vec<FeatureMap>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: "bad magic, expected DBRNFT01".into(),
        });
    }
    let count = cur.u32("map count")?;
    let mut maps = Vec::new();
    for n in 0..count {
        let header_at = cur.pos as u64;
        let w = cur.u32("width")? as usize;
        let h = cur.u32("height")? as usize;
        let d = cur.u32("dim")? as usize;
        if w == 0 || h == 0 || d == 0 {
            return Err(Error::Format {
                offset: header_at,
                reason: format!("map {n} has shape {w}x{h}x{d}"),
            });
        }
        let len = w
            .checked_mul(h)
            .and_then(|x| x.checked_mul(d))
            .filter(|&x| x.checked_mul(4).is_some())
            .ok_or_else(|| Error::Format {
                offset: header_at,
                reason: format!("map {n} shape {w}x{h}x{d} overflows"),
            })?;
        let data_at = cur.pos;
        let raw = cur.take(len * 4, "map data")?;
        let mut data = Vec::with_capacity(len);
        for (i, b) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if !v.is_finite() {
                return Err(Error::Format {
                    offset: (data_at + 4 * i) as u64,
                    reason: format!("map {n} holds a non-finite value"),
                });
            }
            data.push(v as f64);
        }
        maps.push(FeatureMap::new(w, h, d, data)?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format {
            offset: cur.pos as u64,
            reason: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    Ok(maps)
}

pub fn save_features(maps: &[FeatureMap], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_features(maps)?).map_err(|e| Error::io(path, e))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<Vec<FeatureMap>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

/// Sidecar holding one class name per map: `<features>.labels`.
pub fn labels_path(features: &Path) -> PathBuf {
    let mut s = features.as_os_str().to_owned();
    s.push(".labels");
    PathBuf::from(s)
}

pub fn save_labels(labels: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for l in labels {
        if l.is_empty() || l.contains('\n') {
            return Err(Error::Parameter(format!("unusable class label {l:?}")));
        }
        text.push_str(l);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map_strategy() -> impl Strategy<Value = FeatureMap> {
        (1usize..4, 1usize..4, 1usize..5).prop_flat_map(|(w, h, d)| {
            prop::collection::vec(-1e6f32..1e6, w * h * d).prop_map(move |v| {
                FeatureMap::new(w, h, d, v.into_iter().map(f64::from).collect()).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(maps in prop::collection::vec(map_strategy(), 0..6)) {
            let back = decode_features(&encode_features(&maps).unwrap()).unwrap();
            prop_assert_eq!(back.len(), maps.len());
            for (a, b) in maps.iter().zip(&back) {
                prop_assert_eq!(a.shape(), b.shape());
                let bits = |m: &FeatureMap| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                prop_assert_eq!(bits(a), bits(b));
            }
        }
    }

    #[test]
    fn empty_list_is_header_only() {
        let bytes = encode_features(&[]).unwrap();
        assert_eq!(bytes.len(), 12);
        assert_eq!(&bytes[..8], MAGIC);
        assert!(decode_features(&bytes).unwrap().is_empty());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut bytes = encode_features(&[]).unwrap();
        bytes[7] = b'2';
        assert!(matches!(decode_features(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn truncation_reports_offset() {
        let map = FeatureMap::new(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode_features(&[map]).unwrap();
        let err = decode_features(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, 24),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn non_finite_value_reports_offset() {
        let map = FeatureMap::new(2, 1, 1, vec![1.0, 2.0]).unwrap();
        let mut bytes = encode_features(&[map]).unwrap();
        bytes[28..32].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode_features(&bytes).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 28),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn overflowing_values_cannot_be_saved() {
        let map = FeatureMap::new(1, 1, 1, vec![1e300]).unwrap();
        assert!(encode_features(&[map]).is_err());
    }

    #[test]
    fn labels_sidecar_name() {
        assert_eq!(labels_path(Path::new("out/feats.bin")), PathBuf::from("out/feats.bin.labels"));
    }
}
