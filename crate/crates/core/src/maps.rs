// SPDX-License-Identifier: Apache-2.0
//! Dense 2D raster maps and the `PDNM1` binary container.
//!
//! Layout on disk (all little-endian):
//!
//! ```text
//! b"PDNM1"  version:u16  width:u32  height:u32  resolution_um:f64  pixels:[f32; width*height]
//! ```
//!
//! Pixels are row-major with row 0 at the die's lower edge (y = 0).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAP_MAGIC: &[u8; 5] = b"PDNM1";
pub const MAP_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Map2D {
    pub width: usize,
    pub height: usize,
    /// Micrometres per pixel.
    pub resolution: f64,
    pub data: Vec<f64>,
}

impl Map2D {
    pub fn filled(width: usize, height: usize, resolution: f64, value: f64) -> Self {
        Self {
            width,
            height,
            resolution,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize, resolution: f64) -> Self {
        Self::filled(width, height, resolution, 0.0)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn add(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] += v;
    }

    /// Centre of pixel (x, y) in micrometres.
    pub fn pixel_center(&self, x: usize, y: usize) -> (f64, f64) {
        (
            (x as f64 + 0.5) * self.resolution,
            (y as f64 + 0.5) * self.resolution,
        )
    }

    pub fn same_grid(&self, other: &Map2D) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.resolution == other.resolution
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Mean over the pixel rectangle [x0, x1) x [y0, y1).
    pub fn mean_in(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let mut s = 0.0;
        for y in y0..y1 {
            s += self.data[y * self.width + x0..y * self.width + x1]
                .iter()
                .sum::<f64>();
        }
        let n = (x1 - x0) * (y1 - y0);
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }

    /// Replace every pixel with the mean of its `block x block` tile.
    /// Tiles at the right and top edges may be smaller.
    pub fn block_average(&self, block: usize) -> Map2D {
        let block = block.max(1);
        let mut out = self.clone();
        for by in (0..self.height).step_by(block) {
            for bx in (0..self.width).step_by(block) {
                let x1 = (bx + block).min(self.width);
                let y1 = (by + block).min(self.height);
                let m = self.mean_in(bx, by, x1, y1);
                for y in by..y1 {
                    out.data[y * self.width + bx..y * self.width + x1].fill(m);
                }
            }
        }
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAP_MAGIC)?;
        w.write_all(&MAP_VERSION.to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&self.resolution.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from(mut r: impl Read) -> std::result::Result<Self, String> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != MAP_MAGIC {
            return Err("bad magic, expected PDNM1".into());
        }
        let mut b2 = [0u8; 2];
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b2).map_err(|e| e.to_string())?;
        let version = u16::from_le_bytes(b2);
        if version != MAP_VERSION {
            return Err(format!("unsupported map version {version}"));
        }
        r.read_exact(&mut b4).map_err(|e| e.to_string())?;
        let width = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4).map_err(|e| e.to_string())?;
        let height = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8).map_err(|e| e.to_string())?;
        let resolution = f64::from_le_bytes(b8);
        let n = width
            .checked_mul(height)
            .ok_or_else(|| "map dimensions overflow".to_string())?;
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)
            .map_err(|e| format!("truncated pixel data: {e}"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(Self {
            width,
            height,
            resolution,
            data,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f)).map_err(|msg| Error::parse(path, msg))
    }

    /// Round every pixel through f32, matching what a save/load cycle yields.
    pub fn quantized(&self) -> Map2D {
        let mut m = self.clone();
        for v in &mut m.data {
            *v = *v as f32 as f64;
        }
        m
    }
}

/// A grid of per-region scalars, indexed (row, col) with row 0 at y = 0.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RegionGrid<T> {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<T>,
}

impl<T: Clone> RegionGrid<T> {
    pub fn filled(rows: usize, cols: usize, v: T) -> Self {
        Self {
            rows,
            cols,
            values: vec![v; rows * cols],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.values[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: T) {
        self.values[row * self.cols + col] = v;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter_cells(&self) -> impl Iterator<Item = ((usize, usize), &T)> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| ((i / self.cols, i % self.cols), v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = Map2D::filled(3, 2, 2.5, 1.5);
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..5], b"PDNM1");
        assert_eq!(u16::from_le_bytes([buf[5], buf[6]]), 1);
        assert_eq!(u32::from_le_bytes(buf[7..11].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[11..15].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[15..23].try_into().unwrap()), 2.5);
        assert_eq!(buf.len(), 23 + 6 * 4);
        assert_eq!(f32::from_le_bytes(buf[23..27].try_into().unwrap()), 1.5);
    }

    #[test]
    fn truncated_and_bad_magic_fail() {
        let m = Map2D::filled(4, 4, 1.0, 0.25);
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert!(Map2D::read_from(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Map2D::read_from(&bad[..]).is_err());
    }

    #[test]
    fn block_average_conserves_sum() {
        let mut m = Map2D::zeros(10, 7, 1.0);
        for (i, v) in m.data.iter_mut().enumerate() {
            *v = (i % 13) as f64;
        }
        let b = m.block_average(4);
        assert!((b.sum() - m.sum()).abs() < 1e-9);
        assert_eq!(b.get(0, 0), b.get(3, 3));
    }

    proptest! {
        #[test]
        fn save_load_is_f32_quantization(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
            let mut m = Map2D::zeros(w, h, 2.0);
            let mut s = seed;
            for v in &mut m.data {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *v = (s >> 11) as f64 / (1u64 << 53) as f64 * 1e-3;
            }
            let mut buf = Vec::new();
            m.write_to(&mut buf).unwrap();
            let back = Map2D::read_from(&buf[..]).unwrap();
            prop_assert_eq!(back, m.quantized());
        }
    }
}
