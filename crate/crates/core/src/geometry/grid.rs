//! Regular cubic grids of signed distances.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::vec3::Vec3;

const SDF_MAGIC: &[u8; 4] = b"SDF1";

/// Cubic grid of signed distance values, x-fastest. Grid point (i, j, k)
/// sits at `origin + spacing * (i, j, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    resolution: usize,
    origin: Vec3,
    spacing: f64,
    values: Vec<f64>,
}

impl SdfGrid {
    pub fn new(resolution: usize, origin: Vec3, spacing: f64, values: Vec<f64>) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidGrid(format!(
                "resolution must be >= 2, got {resolution}"
            )));
        }
        if spacing <= 0.0 {
            return Err(Error::InvalidGrid(format!(
                "spacing must be positive, got {spacing}"
            )));
        }
        if values.len() != resolution * resolution * resolution {
            return Err(Error::InvalidGrid(format!(
                "value count {} does not match resolution {resolution}^3",
                values.len()
            )));
        }
        Ok(SdfGrid { resolution, origin, spacing, values })
    }

    pub fn zeros(resolution: usize, origin: Vec3, spacing: f64) -> Result<Self> {
        Self::new(resolution, origin, spacing, vec![0.0; resolution.pow(3)])
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.resolution && j < self.resolution && k < self.resolution);
        (k * self.resolution + j) * self.resolution + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.index(i, j, k);
        self.values[idx] = v;
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        [
            self.origin[0] + self.spacing * i as f64,
            self.origin[1] + self.spacing * j as f64,
            self.origin[2] + self.spacing * k as f64,
        ]
    }

    /// All grid point positions in x-fastest order.
    pub fn positions(&self) -> Vec<Vec3> {
        let r = self.resolution;
        let mut out = Vec::with_capacity(r * r * r);
        for k in 0..r {
            for j in 0..r {
                for i in 0..r {
                    out.push(self.position(i, j, k));
                }
            }
        }
        out
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn has_nan(&self) -> bool {
        self.values.iter().any(|v| !v.is_finite())
    }

    /// Little-endian binary dump: magic "SDF1", u32 resolution, 3xf32 origin,
    /// f32 spacing, then resolution^3 f32 values x-fastest.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(4 + 4 + 16 + self.values.len() * 4);
        buf.extend_from_slice(SDF_MAGIC);
        buf.extend_from_slice(&(self.resolution as u32).to_le_bytes());
        for k in 0..3 {
            buf.extend_from_slice(&(self.origin[k] as f32).to_le_bytes());
        }
        buf.extend_from_slice(&(self.spacing as f32).to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut off = 0usize;
        let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
            if *off + n > bytes.len() {
                return Err(Error::format(path, "truncated SDF file"));
            }
            let s = &bytes[*off..*off + n];
            *off += n;
            Ok(s)
        };
        if take(&mut off, 4)? != SDF_MAGIC {
            return Err(Error::format(path, "bad magic, expected SDF1"));
        }
        let resolution =
            u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let mut origin = [0.0f64; 3];
        for slot in origin.iter_mut() {
            *slot = f32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as f64;
        }
        let spacing = f32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as f64;
        let count = resolution
            .checked_pow(3)
            .ok_or_else(|| Error::format(path, "resolution overflow"))?;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(f32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as f64);
        }
        SdfGrid::new(resolution, origin, spacing, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.sdf");
        let values: Vec<f64> = (0..27).map(|i| (i as f64) * 0.125 - 1.0).collect();
        let grid = SdfGrid::new(3, [0.5, -0.25, 0.0], 0.5, values).unwrap();
        grid.save(&path).unwrap();
        let back = SdfGrid::load(&path).unwrap();
        assert_eq!(back, grid);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(SdfGrid::new(1, [0.0; 3], 1.0, vec![0.0]).is_err());
        assert!(SdfGrid::new(2, [0.0; 3], 0.0, vec![0.0; 8]).is_err());
        assert!(SdfGrid::new(2, [0.0; 3], 1.0, vec![0.0; 7]).is_err());
    }
}
