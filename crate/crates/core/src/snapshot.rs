//! Binary field snapshots.
//!
//! Layout, all little-endian: a 64-byte header
//!
//! | offset | size | content                 |
//! |--------|------|-------------------------|
//! | 0      | 4    | magic `DNLS`            |
//! | 4      | 4    | format version (u32)    |
//! | 8      | 4    | points per axis (u32)   |
//! | 12     | 8    | box length (f64)        |
//! | 20     | 8    | time (f64)              |
//! | 28     | 36   | reserved, written as 0  |
//!
//! followed by `N^3` complex samples as interleaved `(re, im)` f64 pairs in
//! grid storage order.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::spectral::{Field3D, Grid, GridError, GridSpec, C64};

pub const MAGIC: &[u8; 4] = b"DNLS";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 64;
/// Refuse to decode grids above this many points per axis.
pub const MAX_POINTS_PER_AXIS: u32 = 1024;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot shorter than its {HEADER_LEN}-byte header ({0} bytes)")]
    Truncated(usize),
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported snapshot version {0}")]
    BadVersion(u32),
    #[error("points per axis {0} exceeds the supported maximum")]
    TooLarge(u32),
    #[error("invalid grid in header: {0}")]
    Grid(#[from] GridError),
    #[error("time stamp is not finite")]
    BadTime,
    #[error("payload length {got} does not match {expected} bytes for the declared grid")]
    PayloadLength { expected: usize, got: usize },
    #[error("snapshot grid {found} does not match the configured grid {expected}")]
    GridMismatch { expected: GridSpec, found: GridSpec },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// A decoded snapshot: geometry, time stamp and raw samples.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub grid: GridSpec,
    pub time: f64,
    pub values: Vec<C64>,
}

impl Snapshot {
    pub fn from_field(u: &Field3D, time: f64) -> Self {
        Self {
            grid: u.grid().spec(),
            time,
            values: u.values().to_vec(),
        }
    }

    /// Builds a field on `grid`, which must have the snapshot's geometry.
    pub fn into_field(self, grid: &Arc<Grid>) -> Result<Field3D, SnapshotError> {
        if grid.spec() != self.grid {
            return Err(SnapshotError::GridMismatch {
                expected: grid.spec(),
                found: self.grid,
            });
        }
        Ok(Field3D::from_values(grid, self.values)?)
    }

    /// Builds a field on a fresh grid with the snapshot's geometry.
    pub fn into_field_on_own_grid(self) -> Result<Field3D, SnapshotError> {
        let grid = Arc::new(Grid::new(self.grid)?);
        Ok(Field3D::from_values(&grid, self.values)?)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 16 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.grid.n as u32).to_le_bytes());
        out.extend_from_slice(&self.grid.box_length.to_le_bytes());
        out.extend_from_slice(&self.time.to_le_bytes());
        out.resize(HEADER_LEN, 0);
        for v in &self.values {
            out.extend_from_slice(&v.re.to_le_bytes());
            out.extend_from_slice(&v.im.to_le_bytes());
        }
        out
    }

    /// Decodes and validates a snapshot. Payload samples are not required to
    /// be finite here; [`Snapshot::into_field`] enforces that.
    pub fn decode(bytes: &[u8]) -> Result<Self, SnapshotError> {
        if bytes.len() < HEADER_LEN {
            return Err(SnapshotError::Truncated(bytes.len()));
        }
        let magic: [u8; 4] = bytes[0..4].try_into().expect("slice of length 4");
        if &magic != MAGIC {
            return Err(SnapshotError::BadMagic(magic));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(SnapshotError::BadVersion(version));
        }
        let n = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if n > MAX_POINTS_PER_AXIS {
            return Err(SnapshotError::TooLarge(n));
        }
        let box_length = f64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let time = f64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes"));
        let grid = GridSpec {
            n: n as usize,
            box_length,
        };
        grid.validate()?;
        if !time.is_finite() {
            return Err(SnapshotError::BadTime);
        }
        let count = grid.n * grid.n * grid.n;
        let expected = HEADER_LEN + 16 * count;
        if bytes.len() != expected {
            return Err(SnapshotError::PayloadLength {
                expected,
                got: bytes.len(),
            });
        }
        let values = bytes[HEADER_LEN..]
            .chunks_exact(16)
            .map(|c| {
                C64::new(
                    f64::from_le_bytes(c[0..8].try_into().expect("8 bytes")),
                    f64::from_le_bytes(c[8..16].try_into().expect("8 bytes")),
                )
            })
            .collect();
        Ok(Self { grid, time, values })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), SnapshotError> {
        w.write_all(&self.encode())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, SnapshotError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::decode(&buf)
    }

    pub fn save(&self, path: &Path) -> Result<(), SnapshotError> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SnapshotError> {
        Self::decode(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::make_grid;

    fn sample() -> Field3D {
        let g = make_grid(8, 6.0).unwrap();
        Field3D::from_fn(&g, |x| C64::new(x[0] - x[2], x[1] * 0.5))
    }

    #[test]
    fn round_trip() {
        let u = sample();
        let bytes = Snapshot::from_field(&u, 1.25).encode();
        assert_eq!(bytes.len(), 64 + 16 * 512);
        assert_eq!(&bytes[0..4], b"DNLS");
        let s = Snapshot::decode(&bytes).unwrap();
        assert_eq!(s.time, 1.25);
        let v = s.into_field(u.grid()).unwrap();
        assert_eq!(v.values(), u.values());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = Snapshot::from_field(&sample(), 0.0).encode();
        assert!(matches!(Snapshot::decode(&bytes[..10]), Err(SnapshotError::Truncated(10))));
        assert!(matches!(
            Snapshot::decode(&bytes[..bytes.len() - 1]),
            Err(SnapshotError::PayloadLength { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Snapshot::decode(&bad), Err(SnapshotError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Snapshot::decode(&bad), Err(SnapshotError::BadVersion(9))));
        let mut bad = bytes.clone();
        bad[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(Snapshot::decode(&bad), Err(SnapshotError::Grid(_))));
        let mut bad = bytes.clone();
        bad[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(Snapshot::decode(&bad), Err(SnapshotError::TooLarge(_))));
        let mut bad = bytes;
        bad[12..20].copy_from_slice(&(-1.0f64).to_le_bytes());
        assert!(matches!(Snapshot::decode(&bad), Err(SnapshotError::Grid(_))));
    }

    #[test]
    fn grid_mismatch_reports_both() {
        let bytes = Snapshot::from_field(&sample(), 0.0).encode();
        let other = make_grid(8, 7.0).unwrap();
        let err = Snapshot::decode(&bytes).unwrap().into_field(&other).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("L=6") && msg.contains("L=7"), "{msg}");
    }

    #[test]
    fn non_finite_payload_rejected_on_conversion() {
        let u = sample();
        let mut s = Snapshot::from_field(&u, 0.0);
        s.values[3] = C64::new(f64::NAN, 0.0);
        let s = Snapshot::decode(&s.encode()).unwrap();
        assert!(s.into_field(u.grid()).is_err());
    }
}
