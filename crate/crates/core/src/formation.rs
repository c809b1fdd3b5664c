//! Forward blur model: render N frames from the reference state via
//! stepwise affine transforms, composite foreground over background with
//! the propagated masks, and average.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::affine::{grid_generate, grid_sample, AffineParams};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::segmentation::{synth_alpha, AlphaMap};

/// The optimized unknowns: middle-frame foreground appearance, static
/// background, and the soft middle mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceState {
    pub foreground: Image,
    pub background: Image,
    pub middle_mask: Image,
}

impl ReferenceState {
    pub fn new(foreground: Image, background: Image, middle_mask: Image) -> Result<Self> {
        if foreground.height() != background.height()
            || foreground.width() != background.width()
            || foreground.channels() != background.channels()
        {
            return Err(Error::ShapeMismatch(
                "foreground and background must share shape".into(),
            ));
        }
        if middle_mask.channels() != 1
            || middle_mask.height() != foreground.height()
            || middle_mask.width() != foreground.width()
        {
            return Err(Error::ShapeMismatch(
                "middle mask must be single-channel with foreground dimensions".into(),
            ));
        }
        Ok(Self {
            foreground,
            background,
            middle_mask,
        })
    }
}

/// N ordered sharp frames plus the motion that generated them.
#[derive(Debug, Clone)]
pub struct VideoClip {
    pub frames: Vec<Image>,
    pub params: AffineParams,
    /// 1-based middle index, `(N + 1) / 2`.
    pub middle_index: usize,
}

fn check_frame_count(n: usize) -> Result<()> {
    if n == 0 || n % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "frame count must be odd and >= 1, got {n}"
        )));
    }
    Ok(())
}

/// Composites one frame: `M f + (1 - M) bg`, with the mask broadcast over
/// color channels.
fn composite(mask: &Image, fg: &Image, bg: &Image) -> Image {
    let mut out = fg.clone();
    let c = fg.channels();
    for y in 0..fg.height() {
        for x in 0..fg.width() {
            let m = mask.get(y, x, 0);
            for ch in 0..c {
                out.set(
                    y,
                    x,
                    ch,
                    m * fg.get(y, x, ch) + (1.0 - m) * bg.get(y, x, ch),
                );
            }
        }
    }
    out
}

/// Renders frame i as the composite of the stepwise-warped foreground and
/// mask over the static background. The middle frame uses the identity
/// transform and equals the composited reference state exactly.
pub fn render_frames(state: &ReferenceState, params: &AffineParams, n: usize) -> Result<VideoClip> {
    check_frame_count(n)?;
    let m = (n + 1) / 2;
    let (h, w) = (state.foreground.height(), state.foreground.width());
    let mut frames = Vec::with_capacity(n);
    for i in 1..=n {
        let k = i as i32 - m as i32;
        let step = params.step_transform(k)?;
        let grid = grid_generate(&step, h, w)?;
        let warped_fg = grid_sample(&state.foreground, &grid);
        let warped_mask = grid_sample(&state.middle_mask, &grid);
        frames.push(composite(&warped_mask, &warped_fg, &state.background));
    }
    Ok(VideoClip {
        frames,
        params: *params,
        middle_index: m,
    })
}

fn mean_of(frames: &[Image]) -> Image {
    // identical frames (identity motion) must average to themselves exactly
    if frames[1..].iter().all(|f| f == &frames[0]) {
        return frames[0].clone();
    }
    let mut acc = frames[0].clone();
    for frame in &frames[1..] {
        for (a, &f) in acc.data_mut().iter_mut().zip(frame.data()) {
            *a += f;
        }
    }
    let inv = 1.0 / frames.len() as f64;
    for a in acc.data_mut() {
        *a *= inv;
    }
    acc
}

/// The model prediction `f(I_m, A)`: pixel-wise mean of the rendered frames.
pub fn blur_forward(state: &ReferenceState, params: &AffineParams, n: usize) -> Result<Image> {
    let clip = render_frames(state, params, n)?;
    Ok(mean_of(&clip.frames))
}

/// Model-predicted alpha map `f(M_m, A)`: mean of the propagated soft masks.
pub fn blur_forward_mask(middle_mask: &Image, params: &AffineParams, n: usize) -> Result<Image> {
    check_frame_count(n)?;
    let m = (n + 1) / 2;
    let (h, w) = (middle_mask.height(), middle_mask.width());
    let mut frames = Vec::with_capacity(n);
    for i in 1..=n {
        let k = i as i32 - m as i32;
        let step = params.step_transform(k)?;
        let grid = grid_generate(&step, h, w)?;
        frames.push(grid_sample(middle_mask, &grid));
    }
    Ok(mean_of(&frames))
}

/// Fills `img` inside `fill_region` (mask value >= 0.5) by repeatedly
/// dilating the surrounding known pixels inward.
pub(crate) fn fill_by_dilation(img: &Image, fill_region: &Image) -> Image {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut out = img.clone();
    let mut known: Vec<bool> = fill_region.data().iter().map(|&v| v < 0.5).collect();
    loop {
        let mut progressed = false;
        let prev = out.clone();
        let prev_known = known.clone();
        for y in 0..h {
            for x in 0..w {
                let idx = y * w + x;
                if prev_known[idx] {
                    continue;
                }
                let mut counts = 0usize;
                let mut sums = vec![0.0; c];
                for (dy, dx) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                    let ny = y as isize + dy;
                    let nx = x as isize + dx;
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let nidx = ny as usize * w + nx as usize;
                    if prev_known[nidx] {
                        counts += 1;
                        for ch in 0..c {
                            sums[ch] += prev.get(ny as usize, nx as usize, ch);
                        }
                    }
                }
                if counts > 0 {
                    for ch in 0..c {
                        out.set(y, x, ch, sums[ch] / counts as f64);
                    }
                    known[idx] = true;
                    progressed = true;
                }
            }
        }
        if !progressed {
            break;
        }
    }
    out
}

/// Everything a synthetic test case needs: the degraded observation, its
/// alpha map, and the ground truth it was rendered from.
#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub blurred: Image,
    pub alpha: AlphaMap,
    pub truth: VideoClip,
    pub truth_state: ReferenceState,
}

/// Builds a synthetic case from a sharp image and a middle-frame alpha
/// region: renders the true clip, averages it into the blurred observation,
/// adds clipped Gaussian noise, and emits the matching synthetic alpha map.
pub fn synthesize_case(
    sharp: &Image,
    alpha_truth: &Image,
    params: &AffineParams,
    n: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<SyntheticCase> {
    if sharp.height() != alpha_truth.height() || sharp.width() != alpha_truth.width() {
        return Err(Error::ShapeMismatch("sharp vs alpha dimensions".into()));
    }
    if alpha_truth.channels() != 1 {
        return Err(Error::InvalidDimensions("alpha must be single-channel".into()));
    }
    if noise_sigma < 0.0 {
        return Err(Error::InvalidParameter("noise sigma must be >= 0".into()));
    }
    let middle = alpha_truth.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    if middle.data().iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateAlpha);
    }
    // object appearance extended outward, background filled inward
    let inverse_region = middle.map(|v| 1.0 - v);
    let foreground = fill_by_dilation(sharp, &inverse_region);
    let background = fill_by_dilation(sharp, &middle);
    let state = ReferenceState::new(foreground, background, middle.clone())?;
    let truth = render_frames(&state, params, n)?;
    let mut blurred = mean_of(&truth.frames);
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in blurred.data_mut() {
            // Box-Muller keeps the dependency surface small
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            *v = (*v + noise_sigma * z).clamp(0.0, 1.0);
        }
    }
    let alpha = synth_alpha(&middle, params, n)?;
    Ok(SyntheticCase {
        blurred,
        alpha,
        truth,
        truth_state: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::psnr;
    use rand::{Rng, SeedableRng};

    fn disk_mask(h: usize, w: usize, cy: f64, cx: f64, r: f64) -> Image {
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

    fn texture(h: usize, w: usize, c: usize) -> Image {
        let mut img = Image::zeros(h, w, c).unwrap();
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let v = 0.5
                        + 0.3 * ((x as f64 * 0.37 + ch as f64).sin())
                        + 0.2 * ((y as f64 * 0.23 - x as f64 * 0.11).cos());
                    img.set(y, x, ch, v.clamp(0.0, 1.0));
                }
            }
        }
        img
    }

    fn demo_state(h: usize, w: usize) -> ReferenceState {
        let fg = texture(h, w, 3);
        let bg = fg.map(|v| 1.0 - v);
        let mask = disk_mask(h, w, h as f64 / 2.0, w as f64 / 2.0, h as f64 / 4.0);
        ReferenceState::new(fg, bg, mask).unwrap()
    }

    #[test]
    fn identity_frames_all_equal_composite() {
        let state = demo_state(32, 32);
        let clip = render_frames(&state, &AffineParams::identity(), 5).unwrap();
        let reference = composite(&state.middle_mask, &state.foreground, &state.background);
        for frame in &clip.frames {
            assert_eq!(frame, &reference);
        }
        assert_eq!(clip.middle_index, 3);
    }

    #[test]
    fn full_mask_ignores_background() {
        let fg = texture(32, 32, 1);
        let bg = Image::constant(32, 32, 1, 0.9).unwrap();
        let mask = Image::constant(32, 32, 1, 1.0).unwrap();
        let state = ReferenceState::new(fg.clone(), bg, mask).unwrap();
        let params = AffineParams::translation_only(0.05, 0.0).unwrap();
        let clip = render_frames(&state, &params, 3).unwrap();
        // frames are pure warps of the foreground wherever the warped mask is 1
        let other_bg = Image::constant(32, 32, 1, 0.1).unwrap();
        let state2 = ReferenceState::new(
            fg,
            other_bg,
            Image::constant(32, 32, 1, 1.0).unwrap(),
        )
        .unwrap();
        let clip2 = render_frames(&state2, &params, 3).unwrap();
        for (a, b) in clip.frames.iter().zip(&clip2.frames) {
            for y in 4..28 {
                for x in 4..28 {
                    assert!((a.get(y, x, 0) - b.get(y, x, 0)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn translation_advances_disk_centroid_evenly() {
        let state = demo_state(64, 64);
        let params = AffineParams::translation_only(0.1, 0.0).unwrap();
        let _clip = render_frames(&state, &params, 5).unwrap();
        let masks = crate::segmentation::propagate_masks(&state.middle_mask, &params, 5).unwrap();
        let cx = |m: &Image| {
            let (mut sx, mut s) = (0.0, 0.0);
            for y in 0..64 {
                for x in 0..64 {
                    sx += m.get(y, x, 0) * x as f64;
                    s += m.get(y, x, 0);
                }
            }
            sx / s
        };
        let step = cx(&masks[1]) - cx(&masks[0]);
        for i in 1..5 {
            let d = cx(&masks[i]) - cx(&masks[i - 1]);
            assert!((d - step).abs() < 0.1, "uneven step {d} vs {step}");
        }
    }

    #[test]
    fn blur_forward_matches_frame_average_oracle() {
        let state = demo_state(48, 48);
        let params = AffineParams::new([[1.01, 0.002], [-0.003, 0.99]], [0.03, -0.01]).unwrap();
        let clip = render_frames(&state, &params, 7).unwrap();
        let blur = blur_forward(&state, &params, 7).unwrap();
        for (i, &v) in blur.data().iter().enumerate() {
            let mean = clip.frames.iter().map(|f| f.data()[i]).sum::<f64>() / 7.0;
            assert!((v - mean).abs() < 1e-12);
        }
        assert!(blur.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn blur_forward_identity_and_single_frame() {
        let state = demo_state(32, 32);
        let reference = composite(&state.middle_mask, &state.foreground, &state.background);
        let id = blur_forward(&state, &AffineParams::identity(), 7).unwrap();
        assert_eq!(id, reference);
        let params = AffineParams::translation_only(0.2, 0.1).unwrap();
        let single = blur_forward(&state, &params, 1).unwrap();
        assert_eq!(single, reference);
    }

    #[test]
    fn blur_forward_mask_matches_synth_alpha() {
        let disk = disk_mask(32, 32, 16.0, 16.0, 7.0);
        let params = AffineParams::translation_only(0.07, 0.01).unwrap();
        let predicted = blur_forward_mask(&disk, &params, 7).unwrap();
        let alpha = synth_alpha(&disk, &params, 7).unwrap();
        assert_eq!(&predicted, alpha.image());
        let id = blur_forward_mask(&disk, &AffineParams::identity(), 7).unwrap();
        assert_eq!(id, disk);
    }

    #[test]
    fn frame_order_reversal_under_inverse_params() {
        let state = demo_state(48, 48);
        let params = AffineParams::new([[1.005, 0.0], [0.0, 1.005]], [0.04, 0.01]).unwrap();
        let forward = render_frames(&state, &params, 5).unwrap();
        let backward = render_frames(&state, &params.invert().unwrap(), 5).unwrap();
        for (i, frame) in forward.frames.iter().enumerate() {
            let mirrored = &backward.frames[4 - i];
            let mut mse = 0.0;
            let mut count = 0;
            for y in 8..40 {
                for x in 8..40 {
                    for c in 0..3 {
                        let d = frame.get(y, x, c) - mirrored.get(y, x, c);
                        mse += d * d;
                        count += 1;
                    }
                }
            }
            mse /= count as f64;
            let p = if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() };
            assert!(p >= 35.0, "frame {i}: psnr {p}");
        }
    }

    #[test]
    fn mean_preserved_under_full_coverage_translation() {
        // x-period of 3 makes the boundary columns of the shifted averages
        // cancel, so the spatial means must agree on the always-valid region
        let mut fg = Image::zeros(32, 32, 1).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let v = 0.3 + 0.15 * (x % 3) as f64 + 0.25 * ((y as f64) * 0.23).sin();
                fg.set(y, x, 0, v.clamp(0.0, 1.0));
            }
        }
        let bg = Image::constant(32, 32, 1, 0.0).unwrap();
        let mask = Image::constant(32, 32, 1, 1.0).unwrap();
        let state = ReferenceState::new(fg.clone(), bg, mask).unwrap();
        // one pixel per frame step in normalized units
        let params = AffineParams::translation_only(2.0 / 31.0, 0.0).unwrap();
        let blur = blur_forward(&state, &params, 3).unwrap();
        // columns 1..=30 are sampled in-bounds by every frame
        let mean_over = |img: &Image| {
            let (mut s, mut count) = (0.0, 0);
            for y in 0..32 {
                for x in 1..31 {
                    s += img.get(y, x, 0);
                    count += 1;
                }
            }
            s / count as f64
        };
        let mb = mean_over(&blur);
        let mf = mean_over(&fg);
        assert!((mb - mf).abs() <= 1e-3, "means {mb} vs {mf}");
    }

    #[test]
    fn synthesize_identity_reproduces_sharp() {
        let sharp = texture(48, 48, 3);
        let disk = disk_mask(48, 48, 24.0, 24.0, 10.0);
        let case = synthesize_case(&sharp, &disk, &AffineParams::identity(), 7, 0.0, 0).unwrap();
        assert_eq!(case.blurred, sharp);
        assert_eq!(case.alpha.image(), &disk);
    }

    #[test]
    fn synthesize_smear_length_matches_translation() {
        // 1-pixel-wide vertical bar smears to about (n-1) * |translation| px
        let h = 64;
        let mut sharp = Image::zeros(h, h, 1).unwrap();
        let mut bar = Image::zeros(h, h, 1).unwrap();
        for y in 20..44 {
            sharp.set(y, 32, 0, 1.0);
            bar.set(y, 32, 0, 1.0);
        }
        let t = 4.0 / (h as f64 - 1.0) * 2.0; // 4 px per frame
        let params = AffineParams::translation_only(t, 0.0).unwrap();
        let case = synthesize_case(&sharp, &bar, &params, 7, 0.0, 0).unwrap();
        // extent of the smear across columns in the blurred band
        let mut min_col = h;
        let mut max_col = 0;
        for x in 0..h {
            let e: f64 = (25..39).map(|y| case.blurred.get(y, x, 0)).sum();
            if e > 0.05 {
                min_col = min_col.min(x);
                max_col = max_col.max(x);
            }
        }
        let extent = (max_col - min_col) as f64;
        let expected = 6.0 * 4.0; // (n-1) * px per frame
        assert!(
            (extent - expected).abs() <= 2.0,
            "smear extent {extent} vs {expected}"
        );
    }

    #[test]
    fn blur_distance_from_sharp_grows_with_translation() {
        let sharp = texture(64, 64, 1);
        let disk = disk_mask(64, 64, 32.0, 32.0, 14.0);
        let mut last = f64::INFINITY;
        for t in [0.02, 0.05, 0.1] {
            let params = AffineParams::translation_only(t, 0.0).unwrap();
            let case = synthesize_case(&sharp, &disk, &params, 7, 0.0, 0).unwrap();
            let p = psnr(&case.blurred, &sharp).unwrap();
            assert!(p < last, "psnr {p} did not decrease at t = {t}");
            last = p;
        }
    }

    #[test]
    fn synthesize_rejects_empty_alpha() {
        let sharp = texture(16, 16, 1);
        let empty = Image::zeros(16, 16, 1).unwrap();
        assert!(matches!(
            synthesize_case(&sharp, &empty, &AffineParams::identity(), 7, 0.0, 0),
            Err(Error::DegenerateAlpha)
        ));
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let sharp = texture(32, 32, 1);
        let disk = disk_mask(32, 32, 16.0, 16.0, 8.0);
        let p = AffineParams::translation_only(0.05, 0.0).unwrap();
        let a = synthesize_case(&sharp, &disk, &p, 7, 0.01, 42).unwrap();
        let b = synthesize_case(&sharp, &disk, &p, 7, 0.01, 42).unwrap();
        assert_eq!(a.blurred, b.blurred);
        let c = synthesize_case(&sharp, &disk, &p, 7, 0.01, 43).unwrap();
        assert_ne!(a.blurred, c.blurred);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let _: f64 = rng.gen_range(0.0..1.0); // keep the rand imports honest
    }
}
