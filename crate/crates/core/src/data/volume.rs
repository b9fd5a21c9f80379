//! Volumes and the MVOL container.
//!
//! Layout, little-endian: `b"MVOL"`, `u32` version (1), `u32` nx, `u32` ny,
//! `u32` nz, then `nx·ny·nz` `f32` intensities with x varying fastest.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MVOL_MAGIC: &[u8; 4] = b"MVOL";
pub const MVOL_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;
/// Refuse anything larger than 2^30 voxels.
const MAX_VOXELS: u64 = 1 << 30;

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub id: String,
    /// (nx, ny, nz)
    pub dims: [usize; 3],
    pub voxels: Vec<f32>,
}

impl Volume {
    pub fn new(id: impl Into<String>, dims: [usize; 3], voxels: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::contract(format!("volume dims must be >= 1, got {dims:?}")));
        }
        if voxels.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::contract(format!(
                "volume of dims {dims:?} needs {} voxels, got {}",
                dims[0] * dims[1] * dims[2],
                voxels.len()
            )));
        }
        Ok(Volume {
            id: id.into(),
            dims,
            voxels,
        })
    }

    pub fn filled(id: impl Into<String>, dims: [usize; 3], value: f32) -> Result<Self> {
        Volume::new(id, dims, vec![value; dims[0] * dims[1] * dims[2]])
    }

    #[inline]
    pub fn offset(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.offset(x, y, z)]
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + 4 * self.voxels.len());
        buf.extend_from_slice(MVOL_MAGIC);
        buf.extend_from_slice(&MVOL_VERSION.to_le_bytes());
        for d in self.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.voxels {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    /// Parses an MVOL byte buffer. `path` only labels errors.
    pub fn decode(bytes: &[u8], id: impl Into<String>, path: &Path) -> Result<Self> {
        let fail = |offset: usize, reason: String| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            reason,
        };
        if bytes.len() < HEADER_LEN {
            return Err(fail(bytes.len(), format!("truncated header ({} bytes)", bytes.len())));
        }
        if &bytes[0..4] != MVOL_MAGIC {
            return Err(fail(0, "bad magic, expected \"MVOL\"".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = word(4);
        if version != MVOL_VERSION {
            return Err(fail(4, format!("unsupported version {version}")));
        }
        let dims = [word(8), word(12), word(16)];
        for (axis, &d) in dims.iter().enumerate() {
            if d == 0 {
                return Err(fail(8 + 4 * axis, "zero dimension".into()));
            }
        }
        let count = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
        let count = match count {
            Some(c) if c <= MAX_VOXELS => c as usize,
            _ => return Err(fail(8, format!("dimension overflow {dims:?}"))),
        };
        let payload = &bytes[HEADER_LEN..];
        if payload.len() < 4 * count {
            return Err(fail(
                bytes.len(),
                format!("truncated payload: {} of {} bytes", payload.len(), 4 * count),
            ));
        }
        if payload.len() > 4 * count {
            return Err(fail(HEADER_LEN + 4 * count, "trailing bytes after payload".into()));
        }
        let voxels = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Volume {
            id: id.into(),
            dims: dims.map(|d| d as usize),
            voxels,
        })
    }
}

pub fn write_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, v.encode()).map_err(|e| Error::io(path, e))
}

/// Reads an MVOL file; the volume id is the file stem.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Volume::decode(&bytes, id, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_volume(dims: [usize; 3], seed: u64) -> Volume {
        let mut rng = Rng::new(seed);
        let n = dims.iter().product();
        let vox = (0..n).map(|_| rng.gaussian() as f32).collect();
        Volume::new("v", dims, vox).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for dims in [[16, 16, 16], [1, 1, 1], [3, 5, 2]] {
            let v = random_volume(dims, 1);
            let p = dir.path().join("v.mvol");
            write_volume(&v, &p).unwrap();
            let back = read_volume(&p).unwrap();
            assert_eq!(back.dims, v.dims);
            let a: Vec<u32> = v.voxels.iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = back.voxels.iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn x_is_fastest() {
        let v = Volume::new("v", [2, 3, 4], (0..24).map(|i| i as f32).collect()).unwrap();
        assert_eq!(v.get(1, 0, 0), 1.0);
        assert_eq!(v.get(0, 1, 0), 2.0);
        assert_eq!(v.get(0, 0, 1), 6.0);
        let bytes = v.encode();
        assert_eq!(&bytes[..4], b"MVOL");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(bytes[24..28].try_into().unwrap()), 1.0);
    }

    fn decode_err(bytes: &[u8]) -> (u64, String) {
        match Volume::decode(bytes, "x", Path::new("x.mvol")) {
            Err(Error::Format { offset, reason, .. }) => (offset, reason),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_files() {
        let good = random_volume([2, 2, 2], 3).encode();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert_eq!(decode_err(&bad_magic).0, 0);

        let (offset, reason) = decode_err(&good[..good.len() - 3]);
        assert_eq!(offset as usize, good.len() - 3);
        assert!(reason.contains("truncated"));

        let mut overflow = good.clone();
        overflow[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        overflow[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_err(&overflow).1.contains("overflow"));

        let mut zero = good.clone();
        zero[16..20].copy_from_slice(&0u32.to_le_bytes());
        assert_eq!(decode_err(&zero).0, 16);

        assert_eq!(decode_err(&good[..7]).0, 7);
    }
}
