use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Mask;

pub const DEPTH_MAGIC: &[u8; 5] = b"DPTH1";

/// Per-pixel camera-frame depth in millimetres; NaN marks undefined pixels.
///
/// Values are held in `f64` so per-pixel optimization and finite-difference
/// checks have headroom; the on-disk format is `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn undefined(width: usize, height: usize) -> Self {
        Self { width, height, values: vec![f64::NAN; width * height] }
    }

    pub fn filled(width: usize, height: usize, depth: f64) -> Self {
        Self { width, height, values: vec![depth; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut d = Self::undefined(width, height);
        for y in 0..height {
            for x in 0..width {
                d.values[y * width + x] = f(x, y);
            }
        }
        d
    }

    /// Fails if any finite value is not strictly positive.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Dimension { what: "depth buffer", expected: width * height, got: values.len() });
        }
        if values.iter().any(|v| v.is_finite() && *v <= 0.0 || v.is_infinite()) {
            return Err(Error::InvalidParameter("defined depth values must be positive and finite".into()));
        }
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, d: f64) {
        self.values[y * self.width + x] = d;
    }

    pub fn set_undefined(&mut self, x: usize, y: usize) {
        self.set(x, y, f64::NAN);
    }

    #[inline]
    pub fn is_defined(&self, x: usize, y: usize) -> bool {
        let v = self.get(x, y);
        v.is_finite() && v > 0.0
    }

    pub fn defined_mask(&self) -> Mask {
        Mask::from_fn(self.width, self.height, |x, y| self.is_defined(x, y))
    }

    /// Copy keeping only pixels inside `mask`.
    pub fn restricted_to(&self, mask: &Mask) -> DepthMap {
        DepthMap::from_fn(self.width, self.height, |x, y| if mask.get(x, y) { self.get(x, y) } else { f64::NAN })
    }

    /// Median over defined pixels inside `mask`.
    pub fn median_over(&self, mask: &Mask) -> Option<f64> {
        let mut v: Vec<f64> = mask.iter_set().map(|(x, y)| self.get(x, y)).filter(|d| d.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
    }

    /// 2×2 downsample averaging the defined pixels of each block.
    pub fn downsample2(&self) -> DepthMap {
        let (w, h) = ((self.width / 2).max(1), (self.height / 2).max(1));
        DepthMap::from_fn(w, h, |x, y| {
            let mut sum = 0.0;
            let mut n = 0;
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let (sx, sy) = (2 * x + dx, 2 * y + dy);
                if sx < self.width && sy < self.height && self.is_defined(sx, sy) {
                    sum += self.get(sx, sy);
                    n += 1;
                }
            }
            if n == 0 {
                f64::NAN
            } else {
                sum / n as f64
            }
        })
    }

    /// Bilinear upsample to `width × height`, sampling this map at the
    /// corresponding pixel centres and falling back to the nearest defined
    /// neighbour.
    pub fn upsample_to(&self, width: usize, height: usize) -> DepthMap {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        DepthMap::from_fn(width, height, |x, y| {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
            let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
            let mut sum = 0.0;
            let mut wsum = 0.0;
            for (px, py, w) in [
                (x0, y0, (1.0 - ax) * (1.0 - ay)),
                (x1, y0, ax * (1.0 - ay)),
                (x0, y1, (1.0 - ax) * ay),
                (x1, y1, ax * ay),
            ] {
                if self.is_defined(px, py) && w > 0.0 {
                    sum += w * self.get(px, py);
                    wsum += w;
                }
            }
            if wsum > 0.0 {
                sum / wsum
            } else {
                let (nx, ny) = (fx.round() as usize, fy.round() as usize);
                self.get(nx, ny)
            }
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + 4 * self.values.len());
        out.extend_from_slice(DEPTH_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for &v in &self.values {
            let f = if v.is_finite() { v as f32 } else { f32::NAN };
            out.extend_from_slice(&f.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const FORMAT: &str = "DPTH1";
        if bytes.len() < 5 || &bytes[..5] != DEPTH_MAGIC {
            return Err(Error::BadMagic { format: FORMAT });
        }
        if bytes.len() < 13 {
            return Err(Error::PayloadSize { format: FORMAT, expected: 8, found: bytes.len() - 5 });
        }
        let w = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        let expected = w.checked_mul(h).and_then(|n| n.checked_mul(4)).unwrap_or(usize::MAX);
        let payload = &bytes[13..];
        if payload.len() != expected {
            return Err(Error::PayloadSize { format: FORMAT, expected, found: payload.len() });
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        DepthMap::from_values(w, h, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
