//! Alpha-map ingestion, middle-frame mask derivation and mask propagation.
//!
//! The alpha map is the temporal average of the per-frame binary masks; the
//! middle mask is its rounding and the other masks are affine propagations
//! of the middle one.

use crate::affine::{grid_generate, grid_sample, AffineParams};
use crate::error::{Error, Result};
use crate::imaging::Image;

/// Single-channel soft foreground indicator, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMap(Image);

impl AlphaMap {
    pub fn new(img: Image) -> Result<Self> {
        if img.channels() != 1 {
            return Err(Error::InvalidDimensions(format!(
                "alpha map must be single-channel, got {} channels",
                img.channels()
            )));
        }
        if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(
                "alpha values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self(img))
    }

    pub fn image(&self) -> &Image {
        &self.0
    }

    pub fn into_image(self) -> Image {
        self.0
    }
}

/// Middle-frame binary mask: round-half-up of the alpha map.
pub fn middle_mask(alpha: &AlphaMap) -> Image {
    alpha.image().map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
}

fn check_frame_count(n: usize) -> Result<()> {
    if n == 0 || n % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "frame count must be odd and >= 1, got {n}"
        )));
    }
    Ok(())
}

/// Propagates the middle mask through stepwise affine transforms:
/// frame i (1-indexed) samples the middle mask through
/// `step_transform(params, i - m)` with `m = (n + 1) / 2`.
pub fn propagate_masks(middle: &Image, params: &AffineParams, n: usize) -> Result<Vec<Image>> {
    check_frame_count(n)?;
    let m = (n + 1) / 2;
    let mut frames = Vec::with_capacity(n);
    for i in 1..=n {
        let k = i as i32 - m as i32;
        let step = params.step_transform(k)?;
        let grid = grid_generate(&step, middle.height(), middle.width())?;
        let mut mask = grid_sample(middle, &grid);
        mask.clamp01();
        frames.push(mask);
    }
    Ok(frames)
}

/// Ground-truth alpha synthesizer: the mean of the n propagated masks.
pub fn synth_alpha(middle_truth: &Image, params: &AffineParams, n: usize) -> Result<AlphaMap> {
    let frames = propagate_masks(middle_truth, params, n)?;
    let mut acc = Image::zeros(middle_truth.height(), middle_truth.width(), 1)?;
    for frame in &frames {
        for (a, &f) in acc.data_mut().iter_mut().zip(frame.data()) {
            *a += f;
        }
    }
    let inv = 1.0 / n as f64;
    for a in acc.data_mut() {
        *a *= inv;
        *a = a.clamp(0.0, 1.0);
    }
    AlphaMap::new(acc)
}
