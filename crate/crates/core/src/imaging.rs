//! Pixel-grid container, raster I/O, bicubic resampling and quality metrics.
//!
//! Intensities are kept as `f64` in the nominal range `[0, 1]`; quantization
//! to 8 bits happens only when a file is written.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major `height x width x channels` grid of intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::InvalidDimensions(format!(
                "image must be at least 2x2, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidDimensions(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidDimensions(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(height, width, channels, vec![0.0; height * width * channels])
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Clamps every intensity into `[0, 1]` in place.
    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn require_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )));
        }
        Ok(())
    }
}

/// PSNR/SSIM pair for one image comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// In decibels; `f64::INFINITY` for identical inputs.
    pub psnr: f64,
    pub ssim: f64,
}

pub fn load_image(path: &Path) -> Result<Image> {
    let dynamic = image::open(path).map_err(|source| Error::ReadImage {
        path: path.to_path_buf(),
        source,
    })?;
    use image::DynamicImage::*;
    let (h, w) = (dynamic.height() as usize, dynamic.width() as usize);
    if h < 2 || w < 2 {
        return Err(Error::UnsupportedImage {
            path: path.to_path_buf(),
            reason: format!("image too small ({h}x{w})"),
        });
    }
    match dynamic {
        ImageLuma8(buf) => {
            let data = buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
            Image::new(h, w, 1, data)
        }
        ImageLumaA8(buf) => {
            let data = buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
            Image::new(h, w, 1, data)
        }
        ImageRgb8(buf) => {
            let data = buf
                .pixels()
                .flat_map(|p| p.0.iter().map(|&v| v as f64 / 255.0).collect::<Vec<_>>())
                .collect();
            Image::new(h, w, 3, data)
        }
        ImageRgba8(buf) => {
            let data = buf
                .pixels()
                .flat_map(|p| p.0[..3].iter().map(|&v| v as f64 / 255.0).collect::<Vec<_>>())
                .collect();
            Image::new(h, w, 3, data)
        }
        _ => Err(Error::UnsupportedImage {
            path: path.to_path_buf(),
            reason: "only 8-bit grayscale or RGB images are supported".into(),
        }),
    }
}

/// Quantizes to 8 bits and writes PNG/PPM/PGM depending on extension.
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    let quantize = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let (w, h) = (img.width() as u32, img.height() as u32);
    let result = match img.channels() {
        1 => {
            let buf = image::GrayImage::from_fn(w, h, |x, y| {
                image::Luma([quantize(img.get(y as usize, x as usize, 0))])
            });
            buf.save(path)
        }
        _ => {
            let buf = image::RgbImage::from_fn(w, h, |x, y| {
                let (y, x) = (y as usize, x as usize);
                image::Rgb([
                    quantize(img.get(y, x, 0)),
                    quantize(img.get(y, x, 1)),
                    quantize(img.get(y, x, 2)),
                ])
            });
            buf.save(path)
        }
    };
    result.map_err(|source| Error::WriteImage {
        path: path.to_path_buf(),
        source,
    })
}

/// Catmull-Rom cubic kernel (a = -0.5).
fn cubic_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (1.5 * x - 2.5) * x * x + 1.0
    } else if x < 2.0 {
        ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0
    } else {
        0.0
    }
}

/// Bicubic resampling to explicit output dimensions, edge handling by
/// clamping source coordinates, output clamped to `[0, 1]`.
pub fn resample_to(img: &Image, out_height: usize, out_width: usize) -> Result<Image> {
    if out_height < 2 || out_width < 2 {
        return Err(Error::InvalidDimensions(format!(
            "resample target {out_height}x{out_width} is below the 2x2 minimum"
        )));
    }
    if out_height == img.height() && out_width == img.width() {
        return Ok(img.clone());
    }
    let fy = out_height as f64 / img.height() as f64;
    let fx = out_width as f64 / img.width() as f64;
    let mut out = Image::zeros(out_height, out_width, img.channels())?;
    for oy in 0..out_height {
        let sy = (oy as f64 + 0.5) / fy - 0.5;
        let iy = sy.floor() as isize;
        for ox in 0..out_width {
            let sx = (ox as f64 + 0.5) / fx - 0.5;
            let ix = sx.floor() as isize;
            for c in 0..img.channels() {
                let mut acc = 0.0;
                let mut wsum = 0.0;
                for dy in -1..=2isize {
                    let wy = cubic_kernel(sy - (iy + dy) as f64);
                    if wy == 0.0 {
                        continue;
                    }
                    let y = (iy + dy).clamp(0, img.height() as isize - 1) as usize;
                    for dx in -1..=2isize {
                        let wx = cubic_kernel(sx - (ix + dx) as f64);
                        if wx == 0.0 {
                            continue;
                        }
                        let x = (ix + dx).clamp(0, img.width() as isize - 1) as usize;
                        acc += wy * wx * img.get(y, x, c);
                        wsum += wy * wx;
                    }
                }
                out.set(oy, ox, c, (acc / wsum).clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

/// Bicubic resampling by a uniform factor; output dims are `round(dim * factor)`.
pub fn resample_bicubic(img: &Image, factor: f64) -> Result<Image> {
    if !(factor > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "resample factor must be positive, got {factor}"
        )));
    }
    let out_h = (img.height() as f64 * factor).round() as usize;
    let out_w = (img.width() as f64 * factor).round() as usize;
    resample_to(img, out_h, out_w)
}

/// Peak signal-to-noise ratio against peak 1.0. Identical inputs give
/// `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.require_same_shape(b, "psnr")?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for i in 0..SSIM_WINDOW {
        for j in 0..SSIM_WINDOW {
            let dy = i as f64 - half;
            let dx = j as f64 - half;
            let v = (-(dy * dy + dx * dx) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[i * SSIM_WINDOW + j] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean local SSIM over an 11x11 Gaussian window (sigma 1.5), unit dynamic
/// range, channels averaged. Windows are taken fully inside the image.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.require_same_shape(b, "ssim")?;
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::InvalidDimensions(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.height(),
            a.width()
        )));
    }
    let window = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..a.channels() {
        for y0 in 0..=(a.height() - SSIM_WINDOW) {
            for x0 in 0..=(a.width() - SSIM_WINDOW) {
                let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let w = window[i * SSIM_WINDOW + j];
                        let x = a.get(y0 + i, x0 + j, c);
                        let y = b.get(y0 + i, x0 + j, c);
                        mx += w * x;
                        my += w * y;
                        mxx += w * x * x;
                        myy += w * y * y;
                        mxy += w * x * y;
                    }
                }
                let vx = mxx - mx * mx;
                let vy = myy - my * my;
                let cov = mxy - mx * my;
                let val = ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                total += val;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

pub fn metrics(a: &Image, b: &Image) -> Result<Metrics> {
    Ok(Metrics {
        psnr: psnr(a, b)?,
        ssim: ssim(a, b)?,
    })
}
