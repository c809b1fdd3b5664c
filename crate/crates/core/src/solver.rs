//! Alternating gradient-descent optimizer over the reference state and the
//! affine parameters, wrapped in a three-scale coarse-to-fine loop.
//!
//! The objective is `sum |f(I_m, A) - B| + w_tv TV(I_m) + p_A(A)`; the image
//! subproblem and the affine subproblem are stepped in alternation with
//! fixed learning rates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affine::{
    grid_generate, sample_grad_coords, sample_grad_image, step_jacobian, AffineParams, MIN_DET,
};
use crate::error::{Error, Result};
use crate::formation::{render_frames, ReferenceState, VideoClip};
use crate::imaging::{resample_to, Image, Metrics};
use crate::regularization::{affine_prior_grad, affine_prior_value, tv_grad, tv_value, RegWeights, TvNorm};
use crate::segmentation::{middle_mask, AlphaMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TvVariant {
    L0,
    L1,
    L2,
}

impl TvVariant {
    pub fn norm(&self, epsilon: f64) -> TvNorm {
        match self {
            TvVariant::L0 => TvNorm::L0 { epsilon },
            TvVariant::L1 => TvNorm::L1,
            TvVariant::L2 => TvNorm::L2,
        }
    }
}

/// Data-residual loss. `L1` is the plain subgradient form; `Charbonnier`
/// smooths the kink with delta = 1e-3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataLoss {
    L1,
    Charbonnier,
}

const CHARBONNIER_DELTA: f64 = 1e-3;

impl DataLoss {
    fn value(&self, r: f64) -> f64 {
        match self {
            DataLoss::L1 => r.abs(),
            DataLoss::Charbonnier => (r * r + CHARBONNIER_DELTA * CHARBONNIER_DELTA).sqrt(),
        }
    }

    fn grad(&self, r: f64) -> f64 {
        match self {
            DataLoss::L1 => {
                if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            DataLoss::Charbonnier => {
                r / (r * r + CHARBONNIER_DELTA * CHARBONNIER_DELTA).sqrt()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub n_frames: usize,
    pub weights: RegWeights,
    pub lr_image: f64,
    pub lr_affine: f64,
    pub iterations_per_scale: [usize; 3],
    pub epsilon_init: f64,
    pub epsilon_halving_period: usize,
    pub tv_variant: TvVariant,
    pub data_loss: DataLoss,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_frames: 7,
            weights: RegWeights::default(),
            lr_image: 0.02,
            lr_affine: 0.01,
            iterations_per_scale: [50, 100, 150],
            epsilon_init: 1.0,
            epsilon_halving_period: 50,
            tv_variant: TvVariant::L0,
            data_loss: DataLoss::L1,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 || self.n_frames % 2 == 0 {
            return Err(Error::Config(format!(
                "n_frames must be odd and >= 1, got {}",
                self.n_frames
            )));
        }
        if !(self.lr_image > 0.0) || !(self.lr_affine > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.epsilon_init > 0.0 && self.epsilon_init <= 1.0) {
            return Err(Error::Config("epsilon_init must lie in (0, 1]".into()));
        }
        if self.epsilon_halving_period == 0 {
            return Err(Error::Config("epsilon_halving_period must be >= 1".into()));
        }
        self.weights.validate()
    }
}

/// Relaxation constant in effect during (0-based) iteration `t`.
pub fn epsilon_at(cfg: &SolverConfig, iteration: usize) -> f64 {
    cfg.epsilon_init / 2f64.powi((iteration / cfg.epsilon_halving_period) as i32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveComponents {
    pub data: f64,
    pub tv: f64,
    pub prior: f64,
}

impl ObjectiveComponents {
    pub fn total(&self) -> f64 {
        self.data + self.tv + self.prior
    }
}

#[derive(Debug, Clone)]
pub struct ExtractionResult {
    pub clip: VideoClip,
    pub state: ReferenceState,
    pub params: AffineParams,
    /// Per-scale objective traces, one entry per iteration.
    pub loss_trace: Vec<Vec<f64>>,
    pub metrics: Option<Metrics>,
}

struct ForwardPass {
    steps: Vec<(i32, AffineParams, [[f64; 6]; 6])>,
    grids: Vec<crate::affine::SampleGrid>,
    warped_fg: Vec<Image>,
    warped_mask: Vec<Image>,
    blur: Image,
    pred_alpha: Image,
}

fn forward_pass(state: &ReferenceState, params: &AffineParams, n: usize) -> Result<ForwardPass> {
    let m = (n + 1) / 2;
    let (h, w, c) = (
        state.foreground.height(),
        state.foreground.width(),
        state.foreground.channels(),
    );
    let mut steps = Vec::with_capacity(n);
    let mut grids = Vec::with_capacity(n);
    let mut warped_fg = Vec::with_capacity(n);
    let mut warped_mask = Vec::with_capacity(n);
    let mut blur = Image::zeros(h, w, c)?;
    let mut pred_alpha = Image::zeros(h, w, 1)?;
    for i in 1..=n {
        let k = i as i32 - m as i32;
        let (step, jac) = step_jacobian(params, k)?;
        let grid = grid_generate(&step, h, w)?;
        let fg_i = crate::affine::grid_sample(&state.foreground, &grid);
        let mask_i = crate::affine::grid_sample(&state.middle_mask, &grid);
        for y in 0..h {
            for x in 0..w {
                let mv = mask_i.get(y, x, 0);
                for ch in 0..c {
                    let frame_px =
                        mv * fg_i.get(y, x, ch) + (1.0 - mv) * state.background.get(y, x, ch);
                    let cur = blur.get(y, x, ch);
                    blur.set(y, x, ch, cur + frame_px);
                }
                let cur = pred_alpha.get(y, x, 0);
                pred_alpha.set(y, x, 0, cur + mv);
            }
        }
        steps.push((k, step, jac));
        grids.push(grid);
        warped_fg.push(fg_i);
        warped_mask.push(mask_i);
    }
    let inv = 1.0 / n as f64;
    for v in blur.data_mut() {
        *v *= inv;
    }
    for v in pred_alpha.data_mut() {
        *v *= inv;
    }
    Ok(ForwardPass {
        steps,
        grids,
        warped_fg,
        warped_mask,
        blur,
        pred_alpha,
    })
}

fn check_shapes(state: &ReferenceState, blurred: &Image, alpha: &Image) -> Result<()> {
    if !state.foreground.same_shape(blurred) {
        return Err(Error::ShapeMismatch(
            "reference state vs blurred image".into(),
        ));
    }
    if alpha.channels() != 1
        || alpha.height() != blurred.height()
        || alpha.width() != blurred.width()
    {
        return Err(Error::ShapeMismatch("alpha map vs blurred image".into()));
    }
    Ok(())
}

fn objective_with(
    state: &ReferenceState,
    params: &AffineParams,
    blurred: &Image,
    alpha: &Image,
    cfg: &SolverConfig,
    epsilon: f64,
) -> Result<(f64, ObjectiveComponents)> {
    check_shapes(state, blurred, alpha)?;
    let pass = forward_pass(state, params, cfg.n_frames)?;
    let data: f64 = pass
        .blur
        .data()
        .iter()
        .zip(blurred.data())
        .map(|(&p, &b)| cfg.data_loss.value(p - b))
        .sum();
    let tv = cfg.weights.w_tv * tv_value(&state.foreground, &cfg.tv_variant.norm(epsilon));
    let prior = affine_prior_value(params, &cfg.weights, &pass.pred_alpha, alpha)?;
    let components = ObjectiveComponents { data, tv, prior };
    Ok((components.total(), components))
}

/// Full objective `sum |f(I_m, A) - B| + w_tv TV + p_A`, with the per-term
/// breakdown for tracing. Uses the configured initial epsilon.
pub fn objective(
    state: &ReferenceState,
    params: &AffineParams,
    blurred: &Image,
    alpha: &AlphaMap,
    cfg: &SolverConfig,
) -> Result<(f64, ObjectiveComponents)> {
    objective_with(state, params, blurred, alpha.image(), cfg, cfg.epsilon_init)
}

/// Analytic gradient of the full objective.
#[derive(Debug, Clone)]
pub struct ObjectiveGrad {
    /// Data + TV gradient over the foreground image.
    pub foreground: Image,
    /// Data gradient over the background image.
    pub background: Image,
    /// Data + alpha-residual gradient over the six theta entries.
    pub theta_data_alpha: [f64; 6],
    /// Affine prior gradient over the six theta entries.
    pub theta_prior: [f64; 6],
}

impl ObjectiveGrad {
    pub fn theta_total(&self) -> [f64; 6] {
        std::array::from_fn(|j| self.theta_data_alpha[j] + self.theta_prior[j])
    }
}

pub fn objective_grad(
    state: &ReferenceState,
    params: &AffineParams,
    blurred: &Image,
    alpha: &Image,
    cfg: &SolverConfig,
    epsilon: f64,
) -> Result<ObjectiveGrad> {
    check_shapes(state, blurred, alpha)?;
    let n = cfg.n_frames;
    let (h, w, c) = (blurred.height(), blurred.width(), blurred.channels());
    let pass = forward_pass(state, params, n)?;

    // dL/dblur, pixel-wise
    let mut blur_grad = pass.blur.clone();
    for (g, (&p, &b)) in blur_grad
        .data_mut()
        .iter_mut()
        .zip(pass.blur.data().iter().zip(blurred.data()))
    {
        *g = cfg.data_loss.grad(p - b);
    }

    let (theta_prior, alpha_grad_img) =
        affine_prior_grad(params, &cfg.weights, &pass.pred_alpha, alpha)?;

    let inv_n = 1.0 / n as f64;
    let x_scale = (w as f64 - 1.0) / 2.0;
    let y_scale = (h as f64 - 1.0) / 2.0;

    let mut grad_fg = Image::zeros(h, w, c)?;
    let mut grad_bg = Image::zeros(h, w, c)?;
    let mut theta_data_alpha = [0.0; 6];

    for (idx, &(k, _, jac)) in pass.steps.iter().enumerate() {
        let grid = &pass.grids[idx];
        let mask_i = &pass.warped_mask[idx];
        let fg_i = &pass.warped_fg[idx];

        // dL/dF_i and dL/dM_i for this frame
        let mut d_frame_fg = Image::zeros(h, w, c)?;
        let mut d_mask = Image::zeros(h, w, 1)?;
        for y in 0..h {
            for x in 0..w {
                let mv = mask_i.get(y, x, 0);
                let mut dm = alpha_grad_img.get(y, x, 0) * inv_n;
                for ch in 0..c {
                    let g = blur_grad.get(y, x, ch) * inv_n;
                    d_frame_fg.set(y, x, ch, g * mv);
                    dm += g * (fg_i.get(y, x, ch) - state.background.get(y, x, ch));
                    let cur = grad_bg.get(y, x, ch);
                    grad_bg.set(y, x, ch, cur + g * (1.0 - mv));
                }
                d_mask.set(y, x, 0, dm);
            }
        }

        // back through the sampler onto the reference foreground
        let jac_img = sample_grad_image(grid, h, w);
        let scattered = jac_img.apply_transpose(&d_frame_fg);
        for (a, &s) in grad_fg.data_mut().iter_mut().zip(scattered.data()) {
            *a += s;
        }

        if k == 0 {
            continue; // middle frame: identity transform, no theta dependence
        }

        // coordinate gradients, then into the composed matrix entries
        let (fgx, fgy) = sample_grad_coords(&state.foreground, grid);
        let (mgx, mgy) = sample_grad_coords(&state.middle_mask, grid);
        let mut d_composed = [0.0; 6];
        for y in 0..h {
            for x in 0..w {
                let mut dpx = d_mask.get(y, x, 0) * mgx.get(y, x, 0);
                let mut dpy = d_mask.get(y, x, 0) * mgy.get(y, x, 0);
                for ch in 0..c {
                    let g = d_frame_fg.get(y, x, ch);
                    dpx += g * fgx.get(y, x, ch);
                    dpy += g * fgy.get(y, x, ch);
                }
                // pixel units -> normalized units
                let dxs = dpx * x_scale;
                let dys = dpy * y_scale;
                let (xt, yt) = grid.target_coord(y, x);
                d_composed[0] += dxs * xt;
                d_composed[1] += dxs * yt;
                d_composed[2] += dxs;
                d_composed[3] += dys * xt;
                d_composed[4] += dys * yt;
                d_composed[5] += dys;
            }
        }
        // chain through the k-step composition to the base parameters
        for j in 0..6 {
            for i in 0..6 {
                theta_data_alpha[j] += d_composed[i] * jac[i][j];
            }
        }
    }

    // TV gradient on the foreground
    if cfg.weights.w_tv != 0.0 {
        let tvg = tv_grad(&state.foreground, &cfg.tv_variant.norm(epsilon));
        for (a, &g) in grad_fg.data_mut().iter_mut().zip(tvg.data()) {
            *a += cfg.weights.w_tv * g;
        }
    }

    Ok(ObjectiveGrad {
        foreground: grad_fg,
        background: grad_bg,
        theta_data_alpha,
        theta_prior,
    })
}

/// One descent step on the reference foreground/background with fixed
/// affine parameters; results clamped to `[0, 1]`.
pub fn step_image(
    state: &ReferenceState,
    params: &AffineParams,
    blurred: &Image,
    alpha: &Image,
    cfg: &SolverConfig,
    epsilon: f64,
) -> Result<ReferenceState> {
    let grad = objective_grad(state, params, blurred, alpha, cfg, epsilon)?;
    let mut fg = state.foreground.clone();
    for (v, &g) in fg.data_mut().iter_mut().zip(grad.foreground.data()) {
        *v = (*v - cfg.lr_image * g).clamp(0.0, 1.0);
    }
    let mut bg = state.background.clone();
    for (v, &g) in bg.data_mut().iter_mut().zip(grad.background.data()) {
        *v = (*v - cfg.lr_image * g).clamp(0.0, 1.0);
    }
    ReferenceState::new(fg, bg, state.middle_mask.clone())
}

/// One descent step on the six affine entries with fixed reference state.
/// The data and alpha-residual gradients are normalized by the pixel count
/// so the effective step is resolution independent; the prior gradient is
/// applied directly. A post-step determinant check re-projects toward the
/// identity if the linear part collapses.
pub fn step_affine(
    state: &ReferenceState,
    params: &AffineParams,
    blurred: &Image,
    alpha: &Image,
    cfg: &SolverConfig,
    epsilon: f64,
) -> Result<AffineParams> {
    let grad = objective_grad(state, params, blurred, alpha, cfg, epsilon)?;
    // normalize by the alpha support: only pixels the object sweeps carry
    // motion information, so this keeps the step size independent of how
    // much static background surrounds the object. The off-diagonal linear
    // entries couple with a zero-mean coordinate (|x|, |y| < 1 over the
    // object) rather than with 1, so a plain count would leave rotation and
    // shear far less responsive than translation; they get the geometric
    // mean of the count and their coupling energy, a compromise between
    // responsiveness and the final-iterate wobble of the l1 subgradient.
    let (h, w) = (alpha.height(), alpha.width());
    let (mut count, mut sum_x2, mut sum_y2) = (0.0f64, 0.0f64, 0.0f64);
    for y in 0..h {
        let yt = -1.0 + 2.0 * y as f64 / (h - 1) as f64;
        for x in 0..w {
            if alpha.get(y, x, 0) > 0.0 {
                let xt = -1.0 + 2.0 * x as f64 / (w - 1) as f64;
                count += 1.0;
                sum_x2 += xt * xt;
                sum_y2 += yt * yt;
            }
        }
    }
    let norms = [
        count,
        (count * sum_y2).sqrt(),
        count,
        (count * sum_x2).sqrt(),
        count,
        count,
    ];
    let mut theta = params.theta();
    for j in 0..6 {
        let g = grad.theta_data_alpha[j] / (2.0 * norms[j].max(1.0)) + grad.theta_prior[j];
        theta[j] -= cfg.lr_affine * g;
    }
    reproject_det(theta)
}

fn reproject_det(mut theta: [f64; 6]) -> Result<AffineParams> {
    for _ in 0..64 {
        let det = theta[0] * theta[4] - theta[1] * theta[3];
        if det.abs() >= MIN_DET && theta.iter().all(|v| v.is_finite()) {
            return AffineParams::from_theta(theta);
        }
        // pull the linear part halfway toward the identity
        theta[0] = 0.5 * (theta[0] + 1.0);
        theta[1] *= 0.5;
        theta[3] *= 0.5;
        theta[4] = 0.5 * (theta[4] + 1.0);
    }
    let det = theta[0] * theta[4] - theta[1] * theta[3];
    Err(Error::SingularTransform { det: det.abs() })
}

/// Alternates image and affine steps for the configured iteration count at
/// one scale, annealing epsilon and recording the objective per iteration.
pub fn run_scale(
    blurred: &Image,
    alpha: &Image,
    state_init: ReferenceState,
    params_init: AffineParams,
    cfg: &SolverConfig,
    scale_index: usize,
) -> Result<(ReferenceState, AffineParams, Vec<f64>)> {
    let iterations = cfg.iterations_per_scale[scale_index];
    let mut state = state_init;
    let mut params = params_init;
    let mut trace = Vec::with_capacity(iterations);
    for t in 0..iterations {
        let epsilon = epsilon_at(cfg, t);
        state = step_image(&state, &params, blurred, alpha, cfg, epsilon)?;
        params = step_affine(&state, &params, blurred, alpha, cfg, epsilon)?;
        let (value, _) = objective_with(&state, &params, blurred, alpha, cfg, epsilon)?;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                scale: scale_index + 1,
                iteration: t,
            });
        }
        trace.push(value);
    }
    Ok((state, params, trace))
}

/// Alg-style three-scale coarse-to-fine extraction: scale factors
/// `(sqrt 2)^(s-3)` for s = 1..3, reference state bicubically upsampled
/// between scales, affine parameters carried unchanged. The output frames
/// are rendered solely from the recovered state and stepwise transforms of
/// the single recovered parameter set.
pub fn extract(blurred: &Image, alpha: &AlphaMap, cfg: &SolverConfig) -> Result<ExtractionResult> {
    cfg.validate()?;
    if alpha.image().height() != blurred.height() || alpha.image().width() != blurred.width() {
        return Err(Error::ShapeMismatch("alpha map vs blurred image".into()));
    }
    let mask_full = middle_mask(alpha);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let linear = [
        [
            1.0 + rng.gen_range(-0.01..0.01),
            rng.gen_range(-0.01..0.01),
        ],
        [
            rng.gen_range(-0.01..0.01),
            1.0 + rng.gen_range(-0.01..0.01),
        ],
    ];
    let mut params = AffineParams::new(linear, [0.0, 0.0])?;

    let (full_h, full_w, c) = (blurred.height(), blurred.width(), blurred.channels());
    let mut fg: Option<Image> = None;
    let mut bg: Option<Image> = None;
    let mut loss_trace = Vec::with_capacity(3);

    let mut state_out: Option<ReferenceState> = None;
    for s in 1..=3usize {
        let scale = 2f64.sqrt().powi(s as i32 - 3);
        let th = ((full_h as f64 * scale).round() as usize).max(2);
        let tw = ((full_w as f64 * scale).round() as usize).max(2);
        let b_s = resample_to(blurred, th, tw)?;
        let a_s = resample_to(alpha.image(), th, tw)?;
        let m_s = resample_to(&mask_full, th, tw)?;
        let fg_s = match fg.take() {
            Some(prev) => resample_to(&prev, th, tw)?,
            None => Image::zeros(th, tw, c)?,
        };
        let bg_s = match bg.take() {
            Some(prev) => resample_to(&prev, th, tw)?,
            None => Image::zeros(th, tw, c)?,
        };
        let state = ReferenceState::new(fg_s, bg_s, m_s)?;
        let (state, new_params, trace) = run_scale(&b_s, &a_s, state, params, cfg, s - 1)?;
        params = new_params;
        fg = Some(state.foreground.clone());
        bg = Some(state.background.clone());
        loss_trace.push(trace);
        state_out = Some(state);
    }

    let state = state_out.expect("three scales always run");
    let clip = render_frames(&state, &params, cfg.n_frames)?;
    Ok(ExtractionResult {
        clip,
        state,
        params,
        loss_trace,
        metrics: None,
    })
}
