//! Pixel-grid primitives: RGB images, single-channel alpha maps, affine
//! resampling, Gaussian blur and reconstruction metrics.
//!
//! Pixel `(x, y)` is addressed by its integer index; its centre sits at the
//! continuous coordinate `(x + 0.5, y + 0.5)`. Affine transforms passed to
//! [`affine_sample`] operate on indices, so the identity transform copies.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};

/// PSNR reported for (near) identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Largest blur kernel radius, in pixels.
pub const MAX_BLUR_RADIUS: usize = 8;

pub type Rgb = [f32; 3];

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RasterImage {
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        let color = color.map(|c| c.clamp(0.0, 1.0));
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn black(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    /// Wraps raw row-major RGB data, validating length and range.
    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "RGB data length {} does not match {width}x{height}x3",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "channel value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Like [`RasterImage::from_data`] but clamps values into range.
    pub fn from_data_clamped(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::from_data(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, color: Rgb) {
        let i = (y * self.width + x) * 3;
        for c in 0..3 {
            self.data[i + c] = color[c].clamp(0.0, 1.0);
        }
    }

    /// Copies the `w`x`h` window starting at `(x0, y0)`. The window must lie
    /// inside the image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Ok(Self {
            width: w,
            height: h,
            data,
        })
    }

    /// Writes `patch` into this image with its top-left corner at `(x0, y0)`,
    /// clipping to bounds.
    pub fn paste(&mut self, patch: &RasterImage, x0: usize, y0: usize) {
        for y in 0..patch.height {
            if y0 + y >= self.height {
                break;
            }
            for x in 0..patch.width {
                if x0 + x >= self.width {
                    break;
                }
                self.set_pixel(x0 + x, y0 + y, patch.pixel(x, y));
            }
        }
    }

    /// Bilinear resampling with pixel-centre alignment.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("zero-area resize".into()));
        }
        if (width, height) == self.dims() {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = (fy - y0 as f64) as f32;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = (fx - x0 as f64) as f32;
                let p00 = self.pixel(x0, y0);
                let p10 = self.pixel(x1, y0);
                let p01 = self.pixel(x0, y1);
                let p11 = self.pixel(x1, y1);
                for c in 0..3 {
                    let top = p00[c] + (p10[c] - p00[c]) * tx;
                    let bottom = p01[c] + (p11[c] - p01[c]) * tx;
                    data.push((top + (bottom - top) * ty).clamp(0.0, 1.0));
                }
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Averages non-overlapping `factor`x`factor` blocks.
    pub fn downsample_box(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot downsample {}x{} by {factor}",
                self.width, self.height
            )));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = 1.0 / (factor * factor) as f32;
        let mut out = Self::black(w, h);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f32; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let p = self.pixel(x * factor + dx, y * factor + dy);
                        for c in 0..3 {
                            acc[c] += p[c];
                        }
                    }
                }
                out.set_pixel(x, y, acc.map(|v| v * norm));
            }
        }
        Ok(out)
    }

    /// Rounds every channel to the nearest 8-bit level.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| dequantize(quantize(v))).collect(),
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let bytes = self.data.iter().map(|&v| quantize(v)).collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions")
    }

    pub fn from_dynamic(img: image::DynamicImage) -> Self {
        let (width, height) = (img.width() as usize, img.height() as usize);
        let data = match img {
            image::DynamicImage::ImageRgb16(_)
            | image::DynamicImage::ImageRgba16(_)
            | image::DynamicImage::ImageLuma16(_)
            | image::DynamicImage::ImageLumaA16(_) => img
                .to_rgb16()
                .into_raw()
                .into_iter()
                .map(|v| v as f32 / 65535.0)
                .collect(),
            // Alpha is dropped as-is; colour channels are never unpremultiplied.
            other => other.to_rgb8().into_raw().into_iter().map(dequantize).collect(),
        };
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
        Ok(Self::from_dynamic(img))
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Cursor::new(Vec::new());
        self.to_rgb8().write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_png_bytes(&bytes)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_png_bytes()?).map_err(|e| Error::io(path, e))
    }

    /// Channel-wise mean over a rectangle of pixel indices (clipped).
    pub fn mean_color(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Rgb {
        let (x1, y1) = (x1.min(self.width), y1.min(self.height));
        let mut acc = [0.0f64; 3];
        let mut n = 0usize;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = self.pixel(x, y);
                for c in 0..3 {
                    acc[c] += p[c] as f64;
                }
                n += 1;
            }
        }
        if n == 0 {
            return [0.0; 3];
        }
        acc.map(|v| (v / n as f64) as f32)
    }
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[inline]
pub fn dequantize(v: u8) -> f32 {
    v as f32 / 255.0
}

/// Row-major single-channel coverage map with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl AlphaMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "alpha data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("alpha {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_data_clamped(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::from_data(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    /// Zero-padded read at signed indices.
    #[inline]
    pub fn get_or_zero(&self, x: isize, y: isize) -> f32 {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            0.0
        } else {
            self.data[y as usize * self.width + x as usize]
        }
    }

    /// Bilinear read at fractional source indices; outside reads 0.
    #[inline]
    pub fn sample(&self, sx: f64, sy: f64) -> f32 {
        self.sample_f64(sx, sy) as f32
    }

    #[inline]
    pub fn sample_f64(&self, sx: f64, sy: f64) -> f64 {
        let x0 = sx.floor();
        let y0 = sy.floor();
        let tx = sx - x0;
        let ty = sy - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let v00 = self.get_or_zero(x0, y0) as f64;
        let v10 = self.get_or_zero(x0 + 1, y0) as f64;
        let v01 = self.get_or_zero(x0, y0 + 1) as f64;
        let v11 = self.get_or_zero(x0 + 1, y0 + 1) as f64;
        let top = v00 + (v10 - v00) * tx;
        let bottom = v01 + (v11 - v01) * tx;
        top + (bottom - top) * ty
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    /// Number of pixels strictly above `threshold`.
    pub fn support(&self, threshold: f32) -> usize {
        self.data.iter().filter(|&&v| v > threshold).count()
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn to_gray8(&self) -> GrayImage {
        let bytes = self.data.iter().map(|&v| quantize(v)).collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions")
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Cursor::new(Vec::new());
        self.to_gray8().write_to(&mut out, ImageFormat::Png)?;
        std::fs::write(path, out.into_inner()).map_err(|e| Error::io(path, e))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)?.to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Ok(Self {
            width: w,
            height: h,
            data: img.into_raw().into_iter().map(dequantize).collect(),
        })
    }
}

/// Axis-aligned rectangle in continuous canvas coordinates.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::new(x, y, x + w, y + h)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> [f64; 2] {
        [(self.x0 + self.x1) * 0.5, (self.y0 + self.y1) * 0.5]
    }

    pub fn union(&self, other: &Rect) -> Rect {
        Rect::new(
            self.x0.min(other.x0),
            self.y0.min(other.y0),
            self.x1.max(other.x1),
            self.y1.max(other.y1),
        )
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Rect {
        Rect::new(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        [
            [self.x0, self.y0],
            [self.x1, self.y0],
            [self.x0, self.y1],
            [self.x1, self.y1],
        ]
    }

    /// Hull of a non-empty set of rectangles.
    pub fn hull<'a>(rects: impl IntoIterator<Item = &'a Rect>) -> Option<Rect> {
        rects.into_iter().fold(None, |acc: Option<Rect>, r| {
            Some(match acc {
                Some(a) => a.union(r),
                None => *r,
            })
        })
    }

    /// Bounding box of a set of points.
    pub fn bounding(points: &[[f64; 2]]) -> Option<Rect> {
        let first = points.first()?;
        let mut r = Rect::new(first[0], first[1], first[0], first[1]);
        for p in &points[1..] {
            r.x0 = r.x0.min(p[0]);
            r.y0 = r.y0.min(p[1]);
            r.x1 = r.x1.max(p[0]);
            r.y1 = r.y1.max(p[1]);
        }
        Some(r)
    }
}

/// Half-open integer pixel window `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRegion {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRegion {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: width,
            y1: height,
        }
    }

    /// Smallest window containing `rect`, clipped to the image.
    pub fn covering(rect: &Rect, width: usize, height: usize) -> Self {
        let clip = |v: f64, hi: usize| v.clamp(0.0, hi as f64) as usize;
        let x0 = clip(rect.x0.floor(), width);
        let y0 = clip(rect.y0.floor(), height);
        Self {
            x0,
            y0,
            x1: clip(rect.x1.ceil(), width).max(x0),
            y1: clip(rect.y1.ceil(), height).max(y0),
        }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x0 <= self.x1 && self.y0 <= self.y1 && self.x1 <= width && self.y1 <= height
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..self.y1).flat_map(move |y| (self.x0..self.x1).map(move |x| (x, y)))
    }
}

/// 2-D affine map `x' = a x + b y + c`, `y' = d x + e y + f`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine2(pub [f64; 6]);

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn translation(tx: f64, ty: f64) -> Self {
        Affine2([1.0, 0.0, tx, 0.0, 1.0, ty])
    }

    pub fn scale(sx: f64, sy: f64) -> Self {
        Affine2([sx, 0.0, 0.0, 0.0, sy, 0.0])
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> [f64; 2] {
        let [a, b, c, d, e, f] = self.0;
        [a * x + b * y + c, d * x + e * y + f]
    }

    pub fn det(&self) -> f64 {
        self.0[0] * self.0[4] - self.0[1] * self.0[3]
    }

    /// `self ∘ other`: applies `other` first.
    pub fn then_after(&self, other: &Affine2) -> Affine2 {
        let [a, b, c, d, e, f] = self.0;
        let [a2, b2, c2, d2, e2, f2] = other.0;
        Affine2([
            a * a2 + b * d2,
            a * b2 + b * e2,
            a * c2 + b * f2 + c,
            d * a2 + e * d2,
            d * b2 + e * e2,
            d * c2 + e * f2 + f,
        ])
    }

    pub fn inverse(&self) -> Option<Affine2> {
        let det = self.det();
        if det.abs() < 1e-12 || !det.is_finite() {
            return None;
        }
        let [a, b, c, d, e, f] = self.0;
        let ia = e / det;
        let ib = -b / det;
        let id = -d / det;
        let ie = a / det;
        Some(Affine2([ia, ib, -(ia * c + ib * f), id, ie, -(id * c + ie * f)]))
    }
}

fn check_same_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            actual: b,
        });
    }
    Ok(())
}

/// Mean absolute difference over all pixels and channels.
pub fn l1_error(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    check_same_dims(a.dims(), b.dims())?;
    if a.data.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    Ok(sum / a.data.len() as f64)
}

pub fn mse(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    check_same_dims(a.dims(), b.dims())?;
    if a.data.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data.len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Peak signal-to-noise ratio in dB for unit-range images, capped at 99 dB.
pub fn psnr(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Resamples `src` onto an `out_width`x`out_height` grid. `transform` maps
/// output pixel indices to source indices; reads outside the source are 0.
pub fn affine_sample(
    src: &AlphaMap,
    transform: &Affine2,
    out_width: usize,
    out_height: usize,
) -> Result<AlphaMap> {
    if out_width == 0 || out_height == 0 {
        return Err(Error::InvalidArgument("zero-area affine_sample output".into()));
    }
    let mut out = AlphaMap::zeros(out_width, out_height);
    for y in 0..out_height {
        for x in 0..out_width {
            let [sx, sy] = transform.apply(x as f64, y as f64);
            out.data[y * out_width + x] = src.sample(sx, sy).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Kernel radius used for a given sigma.
pub fn blur_radius(sigma: f64) -> usize {
    if sigma <= 0.0 {
        0
    } else {
        ((3.0 * sigma).ceil() as usize).min(MAX_BLUR_RADIUS)
    }
}

/// Normalised, truncated Gaussian taps `w[-r..=r]` (index `i + r`).
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = blur_radius(sigma);
    if radius == 0 {
        return vec![1.0];
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut taps: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|i| (-((i * i) as f64) * inv).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= total;
    }
    taps
}

/// Separable zero-padded convolution with a symmetric kernel.
pub(crate) fn convolve_separable(
    data: &[f64],
    width: usize,
    height: usize,
    kx: &[f64],
    ky: &[f64],
) -> Vec<f64> {
    let tmp = convolve_axis(data, width, height, ky, false);
    convolve_axis(&tmp, width, height, kx, true)
}

pub(crate) fn convolve_axis(
    data: &[f64],
    width: usize,
    height: usize,
    kernel: &[f64],
    horizontal: bool,
) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, &w) in kernel.iter().enumerate() {
                let o = k as isize - r;
                let (sx, sy) = if horizontal {
                    (x as isize + o, y as isize)
                } else {
                    (x as isize, y as isize + o)
                };
                if sx >= 0 && sy >= 0 && (sx as usize) < width && (sy as usize) < height {
                    acc += w * data[sy as usize * width + sx as usize];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Separable Gaussian blur, kernel radius `min(ceil(3σ), 8)`, zero padding.
pub fn gaussian_blur(src: &AlphaMap, sigma: f64) -> AlphaMap {
    if blur_radius(sigma) == 0 {
        return src.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let input: Vec<f64> = src.data.iter().map(|&v| v as f64).collect();
    let out = convolve_separable(&input, src.width, src.height, &kernel, &kernel);
    AlphaMap {
        width: src.width,
        height: src.height,
        data: out.into_iter().map(|v| (v as f32).clamp(0.0, 1.0)).collect(),
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn alpha_strategy() -> impl Strategy<Value = AlphaMap> {
        (2usize..12, 2usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0.0f32..=1.0, w * h)
                .prop_map(move |d| AlphaMap::from_data(w, h, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn sampling_stays_in_range(src in alpha_strategy(),
                                   coeffs in proptest::array::uniform6(-3.0f64..3.0)) {
            let out = affine_sample(&src, &Affine2(coeffs), 9, 7).unwrap();
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn blur_stays_in_range(src in alpha_strategy(), sigma in 0.0f64..4.0) {
            let out = gaussian_blur(&src, sigma);
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn blur_preserves_interior_mass(v in proptest::collection::vec(0.0f32..=1.0, 16),
                                        sigma in 0.1f64..4.0) {
            // 4x4 support placed at least MAX_BLUR_RADIUS from every border
            let size = 4 + 2 * MAX_BLUR_RADIUS + 2;
            let mut src = AlphaMap::zeros(size, size);
            for (i, &x) in v.iter().enumerate() {
                src.set(MAX_BLUR_RADIUS + 1 + i % 4, MAX_BLUR_RADIUS + 1 + i / 4, x);
            }
            let out = gaussian_blur(&src, sigma);
            prop_assert!((out.sum() - src.sum()).abs() < 1e-5);
        }
    }
}
