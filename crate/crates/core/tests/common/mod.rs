//! Shared builders for the integration suites.
//!
//! Each test binary compiles this module independently, so not every helper
//! is used by every binary.
#![allow(dead_code)]

use blurclip::affine::AffineParams;
use blurclip::imaging::Image;

/// Deterministic smooth texture with enough gradient structure to anchor
/// motion estimation.
pub fn texture(h: usize, w: usize, c: usize) -> Image {
    let mut img = Image::zeros(h, w, c).unwrap();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let xf = x as f64;
                let yf = y as f64;
                // x-frequencies kept well below the first spectral null of a
                // 7-tap motion average (~0.24 rad/px at 3.8 px/frame) so the
                // blur stays invertible on the texture's spectrum
                let v = 0.30
                    + 0.16 * ((xf * 0.09 + ch as f64 * 1.7).sin())
                    + 0.13 * ((yf * 0.30 - xf * 0.05).cos())
                    + 0.10 * ((yf * 0.07 + xf * 0.07).sin());
                img.set(y, x, ch, v.clamp(0.02, 0.98));
            }
        }
    }
    img
}

pub fn disk_mask(h: usize, w: usize, cy: f64, cx: f64, r: f64) -> Image {
    let mut img = Image::zeros(h, w, 1).unwrap();
    for y in 0..h {
        for x in 0..w {
            let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
            if d <= r {
                img.set(y, x, 0, 1.0);
            }
        }
    }
    img
}

/// The standard 128x128 disk-on-texture scene: a textured disk over a
/// dark uniform background.
pub fn disk_on_texture(size: usize) -> (Image, Image) {
    let h = size as f64;
    disk_scene(size, h / 2.0, h / 2.0, h / 3.6)
}

/// A centered textured bar tilted 45 degrees: its long edges reveal both
/// displacement components of a rotation or zoom, and because those
/// displacements mix x and y on the same edges, the per-axis
/// forward/backward frame-order ambiguity cannot be resolved inconsistently
/// (it can for axis-aligned shapes, whose edges decouple the axes); used for
/// the rotation and zoom round trips.
pub fn diagonal_bar_on_texture(size: usize) -> (Image, Image) {
    let h = size;
    let c = (h as f64 - 1.0) / 2.0;
    let half_len = h as f64 * 0.31;
    let half_w = h as f64 * 0.07;
    let inv_sqrt2 = 1.0 / 2f64.sqrt();
    let mut mask = Image::zeros(h, h, 1).unwrap();
    for y in 0..h {
        for x in 0..h {
            let dy = y as f64 - c;
            let dx = x as f64 - c;
            let u = (dx + dy) * inv_sqrt2;
            let v = (dx - dy) * inv_sqrt2;
            if u.abs() <= half_len && v.abs() <= half_w {
                mask.set(y, x, 0, 1.0);
            }
        }
    }
    let sharp = compose_scene(texture(h, h, 1), &mask);
    (sharp, mask)
}

/// A brighter variant of the disk scene (texture lifted by 0.25 over a 0.4
/// background). The reference frame starts at zero and the image step is
/// fixed-size sign descent, so every unit of scene DC costs iterations of
/// climb — cheap at coarse scale, expensive at full resolution — which is
/// exactly the regime where the pyramid earns its keep.
pub fn bright_disk_on_texture(size: usize) -> (Image, Image) {
    let (mut sharp, mask) = disk_on_texture(size);
    for y in 0..sharp.height() {
        for x in 0..sharp.width() {
            let v = if mask.get(y, x, 0) >= 0.5 {
                (sharp.get(y, x, 0) + 0.25).clamp(0.02, 0.98)
            } else {
                0.4
            };
            sharp.set(y, x, 0, v);
        }
    }
    (sharp, mask)
}

pub fn disk_scene(size: usize, cy: f64, cx: f64, r: f64) -> (Image, Image) {
    let h = size;
    let mask = disk_mask(h, h, cy, cx, r);
    let sharp = compose_scene(texture(h, h, 1), &mask);
    (sharp, mask)
}

/// Textured object on a dark flat background, which keeps the object
/// visually and statistically distinct.
pub fn compose_scene(mut sharp: Image, mask: &Image) -> Image {
    for y in 0..sharp.height() {
        for x in 0..sharp.width() {
            if mask.get(y, x, 0) < 0.5 {
                sharp.set(y, x, 0, 0.15);
            }
        }
    }
    sharp
}

/// PSNR restricted to pixels where `mask` is foreground.
pub fn object_region_psnr(a: &Image, b: &Image, mask: &Image) -> f64 {
    let mut mse = 0.0;
    let mut count = 0usize;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if mask.get(y, x, 0) >= 0.5 {
                for c in 0..a.channels() {
                    let d = a.get(y, x, c) - b.get(y, x, c);
                    mse += d * d;
                    count += 1;
                }
            }
        }
    }
    mse /= count as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// The recovered motion is identifiable only up to frame-order reversal
/// (A and A^-1 generate the same frame set read backwards); pick whichever
/// orientation lies closer to the truth.
pub fn align_to_truth(recovered: &AffineParams, truth: &AffineParams) -> AffineParams {
    let dist = |p: &AffineParams| -> f64 {
        p.theta()
            .iter()
            .zip(truth.theta().iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum()
    };
    match recovered.invert() {
        Ok(inv) if dist(&inv) < dist(recovered) => inv,
        _ => *recovered,
    }
}
