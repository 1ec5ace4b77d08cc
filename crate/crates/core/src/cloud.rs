//! Point clouds and the `.hpc` scan file format.
//!
//! `.hpc` layout (little-endian): magic `HPC1`, `u32` point count `N`,
//! `u32` channel count `c`, then `N x 3` f32 coordinates followed by
//! `N x c` f32 channel values, both row-major.

use std::fs;
use std::path::Path;

use crate::bytes::{checked_len, put_f32s, Reader};
use crate::error::{DecodeError, Error, Result};

pub const HPC_MAGIC: [u8; 4] = *b"HPC1";
const HPC_HEADER_LEN: usize = 12;

/// Ordered 3D points with an optional fixed number of f32 channels per point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
    channels: Vec<f32>,
    n_channels: usize,
}

impl PointCloud {
    /// Builds a cloud, checking row counts and finiteness.
    pub fn new(points: Vec<[f64; 3]>, channels: Vec<f32>, n_channels: usize) -> Result<Self> {
        if channels.len() != points.len() * n_channels {
            return Err(Error::validation(format!(
                "channel block has {} values, expected {} points x {} channels",
                channels.len(),
                points.len(),
                n_channels
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::validation(format!("point {i} has non-finite coordinates")));
        }
        if channels.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite channel value"));
        }
        Ok(Self {
            points,
            channels,
            n_channels,
        })
    }

    /// A cloud with coordinates only.
    pub fn from_points(points: Vec<[f64; 3]>) -> Result<Self> {
        Self::new(points, Vec::new(), 0)
    }

    pub fn empty(n_channels: usize) -> Self {
        Self {
            points: Vec::new(),
            channels: Vec::new(),
            n_channels,
        }
    }

    pub(crate) fn from_parts_unchecked(
        points: Vec<[f64; 3]>,
        channels: Vec<f32>,
        n_channels: usize,
    ) -> Self {
        debug_assert_eq!(channels.len(), points.len() * n_channels);
        Self {
            points,
            channels,
            n_channels,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// Row-major `N x c` channel block.
    pub fn channels(&self) -> &[f32] {
        &self.channels
    }

    pub fn channel_row(&self, i: usize) -> &[f32] {
        &self.channels[i * self.n_channels..(i + 1) * self.n_channels]
    }

    /// Appends all rows of `other`. Channel counts must agree.
    pub fn extend_from(&mut self, other: &PointCloud) -> Result<()> {
        if self.n_channels != other.n_channels {
            return Err(Error::validation(format!(
                "cannot concatenate clouds with {} and {} channels",
                self.n_channels, other.n_channels
            )));
        }
        self.points.extend_from_slice(&other.points);
        self.channels.extend_from_slice(&other.channels);
        Ok(())
    }

    pub fn into_parts(self) -> (Vec<[f64; 3]>, Vec<f32>, usize) {
        (self.points, self.channels, self.n_channels)
    }
}

/// Serializes a cloud as `.hpc`. Coordinates are narrowed to f32.
pub fn encode_hpc(cloud: &PointCloud) -> Vec<u8> {
    let n = cloud.len();
    let mut out = Vec::with_capacity(HPC_HEADER_LEN + n * 12 + cloud.channels.len() * 4);
    out.extend_from_slice(&HPC_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(cloud.n_channels as u32).to_le_bytes());
    for p in &cloud.points {
        for v in p {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    put_f32s(&mut out, &cloud.channels);
    out
}

/// Parses an `.hpc` buffer. The buffer length must match the header exactly.
pub fn decode_hpc(buf: &[u8]) -> Result<PointCloud, DecodeError> {
    let mut r = Reader::new(buf);
    r.magic(HPC_MAGIC)?;
    let n = r.u32()? as usize;
    let c = r.u32()? as usize;
    let body = checked_len(&[n, 3 + c, 4])?;
    let needed = HPC_HEADER_LEN
        .checked_add(body)
        .ok_or_else(|| DecodeError::malformed("declared size overflows"))?;
    if buf.len() < needed {
        return Err(DecodeError::Truncated {
            needed,
            available: buf.len(),
        });
    }
    let coords = r.finite_f32s(n * 3, "coordinates")?;
    let channels = r.finite_f32s(n * c, "channels")?;
    r.finish()?;
    let points = coords
        .chunks_exact(3)
        .map(|p| [f64::from(p[0]), f64::from(p[1]), f64::from(p[2])])
        .collect();
    Ok(PointCloud::from_parts_unchecked(points, channels, c))
}

pub fn read_hpc(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_hpc(&buf).map_err(|e| Error::decode_at(path, e))
}

pub fn write_hpc(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_hpc(cloud)).map_err(|e| Error::io(path, e))
}
