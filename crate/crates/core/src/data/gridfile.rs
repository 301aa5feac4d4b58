//! Binary container for normalized gridded fields.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "SSTG"
//!      4     2  version (u16)
//!      6     4  rows (u32)
//!     10     4  cols (u32)
//!     14     4  channels (u32)
//!     18     8  physical minimum (f64)
//!     26     8  physical maximum (f64)
//!     34     …  payload: rows·cols·channels f32, channel planes, each row-major
//! ```
//! All integers and floats are little-endian. Payload values are normalized to
//! `[0, 1]`; physical value = `min + v·(max − min)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Grid;

pub const GRID_MAGIC: [u8; 4] = *b"SSTG";
pub const GRID_VERSION: u16 = 1;
pub const GRID_HEADER_LEN: usize = 34;

/// A normalized field with the physical range it was normalized from.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFile {
    grid: Grid,
    min: f64,
    max: f64,
}

impl GridFile {
    /// `grid` must be `(1, C, H, W)` with values in `[0, 1]`; `min < max`.
    pub fn new(grid: Grid, min: f64, max: f64) -> Result<Self> {
        if grid.batch() != 1 {
            return Err(Error::shape("grid_file", format!("expected one item, got {}", grid.batch())));
        }
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::invalid("grid_file", format!("range [{min}, {max}] must satisfy min < max")));
        }
        if let Some(v) = grid.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid("grid_file", format!("value {v} outside [0, 1]")));
        }
        Ok(GridFile { grid, min, max })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn into_grid(self) -> Grid {
        self.grid
    }

    pub fn range(&self) -> (f64, f64) {
        (self.min, self.max)
    }

    pub fn to_physical(&self, v: f64) -> f64 {
        self.min + v * (self.max - self.min)
    }

    pub fn physical(&self) -> Grid {
        self.grid.map(|v| self.to_physical(v))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let [_, c, h, w] = self.grid.shape();
        let mut out = Vec::with_capacity(GRID_HEADER_LEN + 4 * self.grid.len());
        out.extend_from_slice(&GRID_MAGIC);
        out.extend_from_slice(&GRID_VERSION.to_le_bytes());
        for dim in [h, w, c] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.min.to_le_bytes());
        out.extend_from_slice(&self.max.to_le_bytes());
        for &v in self.grid.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < GRID_HEADER_LEN {
            return Err(Error::Malformed {
                kind: "grid file",
                detail: format!("header needs {GRID_HEADER_LEN} bytes, found {}", bytes.len()),
            });
        }
        if bytes[..4] != GRID_MAGIC {
            return Err(Error::BadMagic {
                kind: "grid",
                expected: String::from_utf8_lossy(&GRID_MAGIC).into_owned(),
                found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
            });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != GRID_VERSION {
            return Err(Error::UnsupportedVersion {
                kind: "grid",
                found: version,
                supported: GRID_VERSION,
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let (h, w, c) = (u32_at(6), u32_at(10), u32_at(14));
        let (min, max) = (f64_at(18), f64_at(26));
        let expected = h
            .checked_mul(w)
            .and_then(|n| n.checked_mul(c))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Malformed {
                kind: "grid file",
                detail: format!("dimensions {h}x{w}x{c} overflow"),
            })?;
        let payload = &bytes[GRID_HEADER_LEN..];
        if payload.len() != expected {
            return Err(Error::PayloadLengthMismatch {
                expected,
                found: payload.len(),
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let grid = Grid::from_vec([1, c, h, w], data)?;
        GridFile::new(grid, min, max).map_err(|e| Error::Malformed {
            kind: "grid file",
            detail: e.to_string(),
        })
    }
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<GridFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    GridFile::from_bytes(&bytes)
}

pub fn write_grid(path: impl AsRef<Path>, grid: &Grid, min: f64, max: f64) -> Result<()> {
    let path = path.as_ref();
    let file = GridFile::new(grid.clone(), min, max)?;
    fs::write(path, file.to_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], seed: u64) -> Grid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::from_fn(shape, |_| rng.gen_range(0.0..=1.0))
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.sstg");
        let g = random([1, 2, 7, 5], 1);
        write_grid(&path, &g, 271.15, 305.15).unwrap();
        let back = read_grid(&path).unwrap();
        assert_eq!(back.grid().shape(), g.shape());
        assert_eq!(back.range(), (271.15, 305.15));
        let err = back.grid().max_abs_diff(&g);
        assert!(err <= 2f64.powi(-24), "{err}");
        let mut expect = g.clone();
        expect.round_to_f32();
        assert_eq!(back.grid(), &expect);
        assert!((back.to_physical(0.5) - 288.15).abs() < 1e-12);
    }

    #[test]
    fn header_is_34_bytes() {
        let f = GridFile::new(random([1, 1, 64, 64], 2), 0.0, 1.0).unwrap();
        let bytes = f.to_bytes();
        assert_eq!(GRID_HEADER_LEN, 4 + 2 + 4 + 4 + 4 + 8 + 8);
        assert_eq!(bytes.len(), GRID_HEADER_LEN + 64 * 64 * 4);
        assert_eq!(&bytes[..4], b"SSTG");
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 64);
        assert_eq!(GridFile::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = GridFile::new(random([1, 1, 4, 4], 3), 0.0, 1.0).unwrap().to_bytes();
        let truncated = GridFile::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(truncated, Error::PayloadLengthMismatch { expected: 64, found: 61 }));
        assert!(truncated.to_string().contains("payload length mismatch"));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(GridFile::from_bytes(&magic), Err(Error::BadMagic { .. })));
        let mut version = bytes.clone();
        version[4] = 9;
        assert!(matches!(GridFile::from_bytes(&version), Err(Error::UnsupportedVersion { found: 9, .. })));
        assert!(matches!(GridFile::from_bytes(&bytes[..20]), Err(Error::Malformed { .. })));
        let mut range = bytes.clone();
        range[18..26].copy_from_slice(&2.0f64.to_le_bytes());
        assert!(matches!(GridFile::from_bytes(&range), Err(Error::Malformed { .. })));
        assert!(read_grid("/nonexistent/x.sstg").unwrap_err().is_data_error());
    }

    #[test]
    fn invalid_contents_are_rejected_on_write() {
        assert!(GridFile::new(Grid::full([1, 1, 2, 2], 1.5), 0.0, 1.0).is_err());
        assert!(GridFile::new(Grid::full([1, 1, 2, 2], 0.5), 1.0, 1.0).is_err());
        assert!(GridFile::new(Grid::full([2, 1, 2, 2], 0.5), 0.0, 1.0).is_err());
    }
}
