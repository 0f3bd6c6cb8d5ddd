//! Float image and binary mask buffers, PNG interchange and bilinear sampling.
//!
//! PNG values are mapped linearly between `0..=255` and `[0, 1]`; no sRGB
//! transfer curve is applied in either direction.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image with `f32` samples nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("image dimensions must be positive".into()));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Dimension {
                what: "image buffer",
                expected: width * height * 3,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("image contains non-finite values".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bilinear sample in pixel-index coordinates (pixel `i` sits at `x = i`).
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<Sample<3>> {
        sample_planar::<3>(&self.data, self.width, self.height, x, y)
    }

    /// Catmull-Rom bicubic sample in pixel-index coordinates, replicating the
    /// border. It interpolates the pixel values and has continuous first
    /// derivatives, which equal central differences at pixel positions.
    pub fn sample_cubic(&self, x: f64, y: f64) -> Option<Sample<3>> {
        let (max_x, max_y) = ((self.width - 1) as f64, (self.height - 1) as f64);
        if !(x >= 0.0 && y >= 0.0 && x <= max_x && y <= max_y) {
            return None;
        }
        let (x0, y0) = (x.floor(), y.floor());
        let (wx, dwx) = catmull_rom(x - x0);
        let (wy, dwy) = catmull_rom(y - y0);
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        let mut s = Sample { value: [0.0; 3], dx: [0.0; 3], dy: [0.0; 3] };
        for (j, (&ay, &day)) in wy.iter().zip(&dwy).enumerate() {
            let yy = clamp(y0 as isize - 1 + j as isize, self.height);
            for (i, (&ax, &dax)) in wx.iter().zip(&dwx).enumerate() {
                let xx = clamp(x0 as isize - 1 + i as isize, self.width);
                let p = self.get(xx, yy);
                for c in 0..3 {
                    let v = p[c] as f64;
                    s.value[c] += ax * ay * v;
                    s.dx[c] += dax * ay * v;
                    s.dy[c] += ax * day * v;
                }
            }
        }
        Some(s)
    }

    /// Forward-difference gradients. The last column has no x-gradient and the
    /// last row no y-gradient; both are stored as zero and must be excluded
    /// by callers.
    pub fn forward_gradients(&self) -> GradientImage {
        let (w, h) = (self.width, self.height);
        let mut data = vec![0.0f32; w * h * 6];
        for y in 0..h {
            for x in 0..w {
                let c = self.get(x, y);
                let o = (y * w + x) * 6;
                if x + 1 < w {
                    let r = self.get(x + 1, y);
                    for ch in 0..3 {
                        data[o + ch] = r[ch] - c[ch];
                    }
                }
                if y + 1 < h {
                    let d = self.get(x, y + 1);
                    for ch in 0..3 {
                        data[o + 3 + ch] = d[ch] - c[ch];
                    }
                }
            }
        }
        GradientImage { width: w, height: h, data }
    }

    /// 2×2 box downsample (odd trailing row/column dropped).
    pub fn downsample2(&self) -> Image {
        let (w, h) = ((self.width / 2).max(1), (self.height / 2).max(1));
        Image::from_fn(w, h, |x, y| {
            let mut acc = [0.0f32; 3];
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let p = self.get((2 * x + dx).min(self.width - 1), (2 * y + dy).min(self.height - 1));
                for c in 0..3 {
                    acc[c] += 0.25 * p[c];
                }
            }
            acc
        })
    }

    pub fn clamped(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// Mean absolute per-channel difference over the pixels where `mask` is set.
    pub fn mae_over(&self, other: &Image, mask: &Mask) -> Option<f64> {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let mut sum = 0.0;
        let mut n = 0usize;
        for (i, &m) in mask.data().iter().enumerate() {
            if m {
                for c in 0..3 {
                    sum += (self.data[i * 3 + c] as f64 - other.data[i * 3 + c] as f64).abs();
                }
                n += 3;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let rgb = image::open(path.as_ref())?.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let data = rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Image::from_raw(w, h, data)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .expect("buffer length matches dimensions");
        buf.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    /// Encodes the image as an in-memory PNG.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        encode_png_bytes(self.width, self.height, image::ColorType::Rgb8, &self.to_rgb8())
    }
}

fn encode_png_bytes(w: usize, h: usize, color: image::ColorType, raw: &[u8]) -> Result<Vec<u8>> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out).write_image(raw, w as u32, h as u32, color.into())?;
    Ok(out)
}

/// Six-channel forward-difference gradient image: `(dx_r, dx_g, dx_b, dy_r, dy_g, dy_b)`.
#[derive(Debug, Clone)]
pub struct GradientImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GradientImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 6] {
        let o = (y * self.width + x) * 6;
        let mut g = [0.0; 6];
        g.copy_from_slice(&self.data[o..o + 6]);
        g
    }

    /// Samples inside the region where both gradient components are defined,
    /// `[0, w-2] × [0, h-2]`.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<Sample<6>> {
        if self.width < 2 || self.height < 2 {
            return None;
        }
        sample_planar_in::<6>(&self.data, self.width, self.height, self.width - 1, self.height - 1, x, y)
    }
}

/// Catmull-Rom tap weights and their derivatives for fractional offset `t`.
fn catmull_rom(t: f64) -> ([f64; 4], [f64; 4]) {
    let (t2, t3) = (t * t, t * t * t);
    (
        [
            0.5 * (-t3 + 2.0 * t2 - t),
            0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
            0.5 * (-3.0 * t3 + 4.0 * t2 + t),
            0.5 * (t3 - t2),
        ],
        [
            0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
            0.5 * (9.0 * t2 - 10.0 * t),
            0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
            0.5 * (3.0 * t2 - 2.0 * t),
        ],
    )
}

/// Interpolated sample value with its analytic spatial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample<const C: usize> {
    pub value: [f64; C],
    pub dx: [f64; C],
    pub dy: [f64; C],
}

fn sample_planar<const C: usize>(data: &[f32], w: usize, h: usize, x: f64, y: f64) -> Option<Sample<C>> {
    sample_planar_in::<C>(data, w, h, w, h, x, y)
}

/// Samples a `C`-channel interleaved buffer of row stride `w`, restricted to
/// the sub-domain `[0, valid_w-1] × [0, valid_h-1]`.
fn sample_planar_in<const C: usize>(
    data: &[f32],
    w: usize,
    _h: usize,
    valid_w: usize,
    valid_h: usize,
    x: f64,
    y: f64,
) -> Option<Sample<C>> {
    let (max_x, max_y) = ((valid_w - 1) as f64, (valid_h - 1) as f64);
    if !(x >= 0.0 && y >= 0.0 && x <= max_x && y <= max_y) {
        return None;
    }
    // Upper edge: use the last full cell with weight 1 on its far side.
    let x0 = (x.floor() as usize).min(valid_w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(valid_h.saturating_sub(2));
    let x1 = (x0 + 1).min(valid_w - 1);
    let y1 = (y0 + 1).min(valid_h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let at = |xx: usize, yy: usize, c: usize| data[(yy * w + xx) * C + c] as f64;
    let mut s = Sample { value: [0.0; C], dx: [0.0; C], dy: [0.0; C] };
    for c in 0..C {
        let p00 = at(x0, y0, c);
        let p10 = at(x1, y0, c);
        let p01 = at(x0, y1, c);
        let p11 = at(x1, y1, c);
        let top = p00 + fx * (p10 - p00);
        let bottom = p01 + fx * (p11 - p01);
        s.value[c] = top + fy * (bottom - top);
        s.dx[c] = (1.0 - fy) * (p10 - p00) + fy * (p11 - p01);
        s.dy[c] = bottom - top;
    }
    Some(s)
}

/// Binary image-sized mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![false; width * height] }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![true; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(x, y);
            }
        }
        m
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension { what: "mask buffer", expected: width * height, got: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Like [`Mask::get`] but `false` outside the image.
    #[inline]
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height && self.get(x as usize, y as usize)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data.iter().enumerate().filter(|(_, &v)| v).map(move |(i, _)| (i % w, i / w))
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        assert_eq!((self.width, self.height), (other.width, other.height), "mask size mismatch");
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn and(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a || b)
    }

    /// Set difference `self ∖ other`.
    pub fn minus(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Nearest-neighbour 2× downsample: a coarse pixel is set when all four
    /// fine pixels are set.
    pub fn downsample2_all(&self) -> Mask {
        let (w, h) = ((self.width / 2).max(1), (self.height / 2).max(1));
        Mask::from_fn(w, h, |x, y| {
            [(0, 0), (1, 0), (0, 1), (1, 1)]
                .iter()
                .all(|&(dx, dy)| self.get_signed((2 * x + dx) as isize, (2 * y + dy) as isize))
        })
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let g = image::open(path.as_ref())?.to_luma8();
        let (w, h) = (g.width() as usize, g.height() as usize);
        Mask::from_vec(w, h, g.as_raw().iter().map(|&v| v >= 128).collect())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let raw: Vec<u8> = self.data.iter().map(|&v| if v { 255 } else { 0 }).collect();
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions");
        buf.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let raw: Vec<u8> = self.data.iter().map(|&v| if v { 255 } else { 0 }).collect();
        encode_png_bytes(self.width, self.height, image::ColorType::L8, &raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Image {
        Image::from_fn(5, 4, |x, y| {
            let v = 0.1 * x as f32 + 0.05 * (y * y) as f32 + 0.01 * (x * y) as f32;
            [v, 0.5 * v, 1.0 - v]
        })
    }

    #[test]
    fn integer_coordinates_return_pixels() {
        let img = ramp();
        for y in 0..4 {
            for x in 0..5 {
                let s = img.sample_bilinear(x as f64, y as f64).unwrap();
                let p = img.get(x, y);
                for c in 0..3 {
                    assert_eq!(s.value[c], p[c] as f64);
                }
            }
        }
    }

    #[test]
    fn cubic_interpolates_pixels() {
        let img = ramp();
        for y in 0..4 {
            for x in 0..5 {
                let s = img.sample_cubic(x as f64, y as f64).unwrap();
                let p = img.get(x, y);
                for c in 0..3 {
                    assert!((s.value[c] - p[c] as f64).abs() < 1e-12);
                }
            }
        }
        assert!(img.sample_cubic(-0.1, 1.0).is_none());
        assert!(img.sample_cubic(1.0, 3.01).is_none());
    }

    #[test]
    fn cubic_gradient_matches_finite_differences() {
        let img = ramp();
        let h = 1e-6;
        for &(x, y) in &[(0.3, 0.7), (2.41, 1.2), (3.6, 2.55), (1.5, 1.5)] {
            let s = img.sample_cubic(x, y).unwrap();
            let (xp, xm) = (img.sample_cubic(x + h, y).unwrap(), img.sample_cubic(x - h, y).unwrap());
            let (yp, ym) = (img.sample_cubic(x, y + h).unwrap(), img.sample_cubic(x, y - h).unwrap());
            for c in 0..3 {
                assert!((s.dx[c] - (xp.value[c] - xm.value[c]) / (2.0 * h)).abs() < 1e-6);
                assert!((s.dy[c] - (yp.value[c] - ym.value[c]) / (2.0 * h)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cubic_derivative_at_interior_pixels_is_central_difference() {
        let img = ramp();
        for y in 1..3 {
            for x in 1..4 {
                let s = img.sample_cubic(x as f64, y as f64).unwrap();
                let (l, r) = (img.get(x - 1, y), img.get(x + 1, y));
                let (u, d) = (img.get(x, y - 1), img.get(x, y + 1));
                for c in 0..3 {
                    assert!((s.dx[c] - 0.5 * (r[c] as f64 - l[c] as f64)).abs() < 1e-7);
                    assert!((s.dy[c] - 0.5 * (d[c] as f64 - u[c] as f64)).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn midpoint_is_average() {
        let img = ramp();
        let s = img.sample_bilinear(1.5, 2.0).unwrap();
        let (a, b) = (img.get(1, 2), img.get(2, 2));
        for c in 0..3 {
            assert!((s.value[c] - 0.5 * (a[c] as f64 + b[c] as f64)).abs() < 1e-7);
        }
    }

    #[test]
    fn bilinear_gradient_matches_central_differences() {
        let img = ramp();
        let h = 1e-5;
        for &(x, y) in &[(0.3, 0.7), (2.41, 1.2), (3.6, 2.55), (1.1, 0.05)] {
            let s = img.sample_bilinear(x, y).unwrap();
            let sxp = img.sample_bilinear(x + h, y).unwrap();
            let sxm = img.sample_bilinear(x - h, y).unwrap();
            let syp = img.sample_bilinear(x, y + h).unwrap();
            let sym = img.sample_bilinear(x, y - h).unwrap();
            for c in 0..3 {
                assert!((s.dx[c] - (sxp.value[c] - sxm.value[c]) / (2.0 * h)).abs() < 1e-4);
                assert!((s.dy[c] - (syp.value[c] - sym.value[c]) / (2.0 * h)).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn out_of_bounds_is_flagged() {
        let img = ramp();
        assert!(img.sample_bilinear(-0.01, 1.0).is_none());
        assert!(img.sample_bilinear(4.0001, 1.0).is_none());
        assert!(img.sample_bilinear(1.0, f64::NAN).is_none());
        assert!(img.sample_bilinear(4.0, 3.0).is_some());
    }

    #[test]
    fn gradient_image_ignores_constant_offset() {
        let a = Image::from_fn(6, 5, |x, y| [x as f32 / 8.0, y as f32 / 16.0, ((x * y) % 3) as f32 / 4.0]);
        let b = Image::from_fn(6, 5, |x, y| {
            let p = a.get(x, y);
            [p[0] + 0.125, p[1] + 0.125, p[2] + 0.125]
        });
        let (ga, gb) = (a.forward_gradients(), b.forward_gradients());
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(ga.get(x, y), gb.get(x, y));
            }
        }
    }

    #[test]
    fn png_round_trip_is_quantized_linear() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Image::from_fn(3, 2, |x, y| [(x * 40 + y) as f32 / 255.0, 0.0, 1.0]);
        img.save_png(&p).unwrap();
        assert_eq!(Image::load_png(&p).unwrap(), img);

        let m = Mask::from_fn(4, 3, |x, y| (x + y) % 2 == 0);
        let mp = dir.path().join("m.png");
        m.save_png(&mp).unwrap();
        assert_eq!(Mask::load_png(&mp).unwrap(), m);
    }
}
