//! Penalty terms: total variation under l0/l1/l2 norms and the affine prior
//! with the alpha-channel residual. Every term exposes both value and
//! analytic gradient.
//!
//! Differences are forward differences; the last row/column has no
//! difference (no wraparound). Subgradients at kinks are 0.

use serde::{Deserialize, Serialize};

use crate::affine::AffineParams;
use crate::error::{Error, Result};
use crate::imaging::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TvNorm {
    /// Eq-style piecewise relaxation: `|d|^2 / eps^2` when `|d| <= eps`,
    /// 1 otherwise. `eps` is annealed by the solver.
    L0 { epsilon: f64 },
    L1,
    L2,
}

impl TvNorm {
    fn phi(&self, d: f64) -> f64 {
        match *self {
            TvNorm::L0 { epsilon } => {
                if d.abs() <= epsilon {
                    d * d / (epsilon * epsilon)
                } else {
                    1.0
                }
            }
            TvNorm::L1 => d.abs(),
            TvNorm::L2 => d * d,
        }
    }

    fn dphi(&self, d: f64) -> f64 {
        match *self {
            TvNorm::L0 { epsilon } => {
                if d.abs() <= epsilon {
                    2.0 * d / (epsilon * epsilon)
                } else {
                    0.0
                }
            }
            TvNorm::L1 => {
                if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            TvNorm::L2 => 2.0 * d,
        }
    }
}

/// Objective weights: TV, alpha residual, linear-part prior, translation prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegWeights {
    pub w_tv: f64,
    pub w_alpha: f64,
    pub w_l: f64,
    pub w_t: f64,
}

impl Default for RegWeights {
    fn default() -> Self {
        Self {
            w_tv: 1e-9,
            w_alpha: 0.3,
            w_l: 10.0,
            w_t: 1.0,
        }
    }
}

impl RegWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_tv, self.w_alpha, self.w_l, self.w_t];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(
                "regularization weights must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Total variation of an image under the given norm, summed over both
/// forward-difference directions, all pixels and channels.
pub fn tv_value(img: &Image, norm: &TvNorm) -> f64 {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = img.get(y, x, ch);
                if x + 1 < w {
                    total += norm.phi(img.get(y, x + 1, ch) - v);
                }
                if y + 1 < h {
                    total += norm.phi(img.get(y + 1, x, ch) - v);
                }
            }
        }
    }
    total
}

/// Exact gradient of `tv_value`; each difference scatters its derivative to
/// both stencil pixels.
pub fn tv_grad(img: &Image, norm: &TvNorm) -> Image {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut grad = Image::zeros(h, w, c).expect("image dims already valid");
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = img.get(y, x, ch);
                if x + 1 < w {
                    let g = norm.dphi(img.get(y, x + 1, ch) - v);
                    let cur = grad.get(y, x + 1, ch);
                    grad.set(y, x + 1, ch, cur + g);
                    let cur = grad.get(y, x, ch);
                    grad.set(y, x, ch, cur - g);
                }
                if y + 1 < h {
                    let g = norm.dphi(img.get(y + 1, x, ch) - v);
                    let cur = grad.get(y + 1, x, ch);
                    grad.set(y + 1, x, ch, cur + g);
                    let cur = grad.get(y, x, ch);
                    grad.set(y, x, ch, cur - g);
                }
            }
        }
    }
    grad
}

/// `w_l ||A_l - E||^2 + w_t ||A_t||^2 + w_alpha sum |predicted_alpha - alpha|`.
pub fn affine_prior_value(
    params: &AffineParams,
    weights: &RegWeights,
    predicted_alpha: &Image,
    alpha: &Image,
) -> Result<f64> {
    if !predicted_alpha.same_shape(alpha) {
        return Err(Error::ShapeMismatch(
            "predicted alpha vs alpha map".into(),
        ));
    }
    let l = params.linear();
    let t = params.translation();
    let linear_term = (l[0][0] - 1.0).powi(2)
        + l[0][1].powi(2)
        + l[1][0].powi(2)
        + (l[1][1] - 1.0).powi(2);
    let trans_term = t[0] * t[0] + t[1] * t[1];
    let alpha_term: f64 = predicted_alpha
        .data()
        .iter()
        .zip(alpha.data())
        .map(|(&p, &a)| (p - a).abs())
        .sum();
    Ok(weights.w_l * linear_term + weights.w_t * trans_term + weights.w_alpha * alpha_term)
}

/// Gradient of the affine prior: over the six theta entries (in `theta()`
/// order) and over the predicted alpha image. The alpha-image part is the
/// l1 subgradient `w_alpha * sign(residual)`; routing it back into the
/// affine parameters through the mask formation is the solver's job.
pub fn affine_prior_grad(
    params: &AffineParams,
    weights: &RegWeights,
    predicted_alpha: &Image,
    alpha: &Image,
) -> Result<([f64; 6], Image)> {
    if !predicted_alpha.same_shape(alpha) {
        return Err(Error::ShapeMismatch(
            "predicted alpha vs alpha map".into(),
        ));
    }
    let l = params.linear();
    let t = params.translation();
    let theta_grad = [
        2.0 * weights.w_l * (l[0][0] - 1.0),
        2.0 * weights.w_l * l[0][1],
        2.0 * weights.w_t * t[0],
        2.0 * weights.w_l * l[1][0],
        2.0 * weights.w_l * (l[1][1] - 1.0),
        2.0 * weights.w_t * t[1],
    ];
    let mut alpha_grad = predicted_alpha.clone();
    for (g, (&p, &a)) in alpha_grad
        .data_mut()
        .iter_mut()
        .zip(predicted_alpha.data().iter().zip(alpha.data()))
    {
        let r = p - a;
        *g = if r > 0.0 {
            weights.w_alpha
        } else if r < 0.0 {
            -weights.w_alpha
        } else {
            0.0
        };
    }
    Ok((theta_grad, alpha_grad))
}
