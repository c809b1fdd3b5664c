//! Six-parameter affine motion model in normalized coordinates, with the
//! differentiable grid generator / bilinear grid sampler pair and the
//! stepwise composition used to reach every frame from the reference one.
//!
//! Normalized coordinates span `[-1, 1]` per axis: pixel 0 maps to -1 and
//! pixel `dim - 1` maps to +1, which makes the parameters resolution
//! independent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;

pub const MIN_DET: f64 = 1e-6;

/// `[A_l | A_t]`: a 2x2 linear part plus a translation 2-vector, mapping
/// target coordinates to source coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    linear: [[f64; 2]; 2],
    translation: [f64; 2],
}

impl AffineParams {
    pub fn new(linear: [[f64; 2]; 2], translation: [f64; 2]) -> Result<Self> {
        let entries = [
            linear[0][0],
            linear[0][1],
            linear[1][0],
            linear[1][1],
            translation[0],
            translation[1],
        ];
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "affine entries must be finite".into(),
            ));
        }
        let det = linear[0][0] * linear[1][1] - linear[0][1] * linear[1][0];
        if det.abs() < MIN_DET {
            return Err(Error::SingularTransform { det: det.abs() });
        }
        Ok(Self {
            linear,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            linear: [[1.0, 0.0], [0.0, 1.0]],
            translation: [0.0, 0.0],
        }
    }

    pub fn translation_only(tx: f64, ty: f64) -> Result<Self> {
        Self::new([[1.0, 0.0], [0.0, 1.0]], [tx, ty])
    }

    /// Entries in row order: theta11, theta12, theta13, theta21, theta22, theta23.
    pub fn from_theta(theta: [f64; 6]) -> Result<Self> {
        Self::new(
            [[theta[0], theta[1]], [theta[3], theta[4]]],
            [theta[2], theta[5]],
        )
    }

    pub fn theta(&self) -> [f64; 6] {
        [
            self.linear[0][0],
            self.linear[0][1],
            self.translation[0],
            self.linear[1][0],
            self.linear[1][1],
            self.translation[1],
        ]
    }

    pub fn linear(&self) -> [[f64; 2]; 2] {
        self.linear
    }

    pub fn translation(&self) -> [f64; 2] {
        self.translation
    }

    pub fn det(&self) -> f64 {
        self.linear[0][0] * self.linear[1][1] - self.linear[0][1] * self.linear[1][0]
    }

    /// `(A_l^-1, -A_l^-1 A_t)`.
    pub fn invert(&self) -> Result<AffineParams> {
        let det = self.det();
        if det.abs() < MIN_DET {
            return Err(Error::SingularTransform { det: det.abs() });
        }
        let inv = [
            [self.linear[1][1] / det, -self.linear[0][1] / det],
            [-self.linear[1][0] / det, self.linear[0][0] / det],
        ];
        let t = [
            -(inv[0][0] * self.translation[0] + inv[0][1] * self.translation[1]),
            -(inv[1][0] * self.translation[0] + inv[1][1] * self.translation[1]),
        ];
        AffineParams::new(inv, t)
    }

    /// Composition `a.compose(b)`: linear `= a_l b_l`, translation
    /// `= a_l b_t + a_t`, i.e. the coordinate map `x -> a(b(x))`.
    pub fn compose(&self, other: &AffineParams) -> AffineParams {
        let a = self.linear;
        let b = other.linear;
        let linear = [
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ];
        let translation = [
            a[0][0] * other.translation[0] + a[0][1] * other.translation[1] + self.translation[0],
            a[1][0] * other.translation[0] + a[1][1] * other.translation[1] + self.translation[1],
        ];
        AffineParams {
            linear,
            translation,
        }
    }

    /// k-fold composition of the transform (inverse composition for k < 0,
    /// identity for k = 0).
    pub fn step_transform(&self, k: i32) -> Result<AffineParams> {
        let (base, reps) = if k >= 0 {
            (*self, k as u32)
        } else {
            (self.invert()?, (-k) as u32)
        };
        let mut acc = AffineParams::identity();
        for _ in 0..reps {
            acc = acc.compose(&base);
        }
        Ok(acc)
    }
}

type Mat3 = [[f64; 3]; 3];

fn mat3_from(params: &AffineParams) -> Mat3 {
    let l = params.linear;
    let t = params.translation;
    [
        [l[0][0], l[0][1], t[0]],
        [l[1][0], l[1][1], t[1]],
        [0.0, 0.0, 1.0],
    ]
}

fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat3_add(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][j] + b[i][j];
        }
    }
    out
}

fn mat3_neg(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = -a[i][j];
        }
    }
    out
}

const MAT3_IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Elementary derivative of the homogeneous matrix with respect to the
/// theta entries, in the `theta()` ordering.
fn theta_basis(j: usize) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    let (row, col) = match j {
        0 => (0, 0),
        1 => (0, 1),
        2 => (0, 2),
        3 => (1, 0),
        4 => (1, 1),
        5 => (1, 2),
        _ => unreachable!(),
    };
    m[row][col] = 1.0;
    m
}

fn params_from_mat3(m: &Mat3) -> AffineParams {
    AffineParams {
        linear: [[m[0][0], m[0][1]], [m[1][0], m[1][1]]],
        translation: [m[0][2], m[1][2]],
    }
}

/// Returns the k-step composed transform together with the Jacobian of its
/// six entries with respect to the six base entries: `jac[i][j]` is the
/// derivative of composed `theta_i` with respect to base `theta_j`.
pub fn step_jacobian(params: &AffineParams, k: i32) -> Result<(AffineParams, [[f64; 6]; 6])> {
    let (base, d_base, reps): (Mat3, [Mat3; 6], u32) = if k >= 0 {
        let d = std::array::from_fn(theta_basis);
        (mat3_from(params), d, k as u32)
    } else {
        // B = A^-1, dB = -B dA B
        let inv = params.invert()?;
        let b = mat3_from(&inv);
        let d = std::array::from_fn(|j| mat3_neg(&mat3_mul(&mat3_mul(&b, &theta_basis(j)), &b)));
        (b, d, (-k) as u32)
    };
    let mut acc = MAT3_IDENTITY;
    let mut d_acc = [[[0.0; 3]; 3]; 6];
    for _ in 0..reps {
        for j in 0..6 {
            d_acc[j] = mat3_add(&mat3_mul(&d_acc[j], &base), &mat3_mul(&acc, &d_base[j]));
        }
        acc = mat3_mul(&acc, &base);
    }
    let composed = params_from_mat3(&acc);
    let mut jac = [[0.0; 6]; 6];
    for j in 0..6 {
        let d = d_acc[j];
        jac[0][j] = d[0][0];
        jac[1][j] = d[0][1];
        jac[2][j] = d[0][2];
        jac[3][j] = d[1][0];
        jac[4][j] = d[1][1];
        jac[5][j] = d[1][2];
    }
    Ok((composed, jac))
}

/// Per-target-pixel source coordinates in normalized units. Coordinates may
/// fall outside `[-1, 1]`; the sampler treats those as zero contribution.
#[derive(Debug, Clone)]
pub struct SampleGrid {
    height: usize,
    width: usize,
    /// `(x_s, y_s)` per target pixel, row-major.
    coords: Vec<(f64, f64)>,
}

impl SampleGrid {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    /// Normalized target coordinate of pixel `(y, x)`.
    pub fn target_coord(&self, y: usize, x: usize) -> (f64, f64) {
        (
            norm_coord(x, self.width),
            norm_coord(y, self.height),
        )
    }
}

#[inline]
pub fn norm_coord(index: usize, dim: usize) -> f64 {
    2.0 * index as f64 / (dim - 1) as f64 - 1.0
}

/// Converts a normalized coordinate to pixel units, snapping coordinates
/// within 1e-9 px of an integer onto it so that identity grids sample
/// exactly.
#[inline]
fn to_pixel(v: f64, dim: usize) -> f64 {
    let p = (v + 1.0) * (dim - 1) as f64 / 2.0;
    let r = p.round();
    if (p - r).abs() < 1e-9 {
        r
    } else {
        p
    }
}

/// Maps every target pixel through the affine transform: source
/// `= linear * (x_t, y_t) + translation`.
pub fn grid_generate(params: &AffineParams, height: usize, width: usize) -> Result<SampleGrid> {
    if height < 2 || width < 2 {
        return Err(Error::InvalidDimensions(format!(
            "grid must be at least 2x2, got {height}x{width}"
        )));
    }
    let l = params.linear;
    let t = params.translation;
    let mut coords = Vec::with_capacity(height * width);
    for y in 0..height {
        let yt = norm_coord(y, height);
        for x in 0..width {
            let xt = norm_coord(x, width);
            coords.push((
                l[0][0] * xt + l[0][1] * yt + t[0],
                l[1][0] * xt + l[1][1] * yt + t[1],
            ));
        }
    }
    Ok(SampleGrid {
        height,
        width,
        coords,
    })
}

pub fn identity_grid(height: usize, width: usize) -> Result<SampleGrid> {
    grid_generate(&AffineParams::identity(), height, width)
}

/// Bilinear grid sampler: output pixel i is the kernel-weighted sum of the
/// source pixels around its sampled coordinate. Coordinates wholly outside
/// the source evaluate to 0.
pub fn grid_sample(src: &Image, grid: &SampleGrid) -> Image {
    let (sh, sw, c) = (src.height(), src.width(), src.channels());
    let mut out = Image::zeros(grid.height, grid.width, c).expect("grid dims validated");
    for (i, &(xs, ys)) in grid.coords.iter().enumerate() {
        let px = to_pixel(xs, sw);
        let py = to_pixel(ys, sh);
        let m0 = px.floor() as isize;
        let n0 = py.floor() as isize;
        let oy = i / grid.width;
        let ox = i % grid.width;
        for n in n0..=n0 + 1 {
            if n < 0 || n >= sh as isize {
                continue;
            }
            let wy = 1.0 - (py - n as f64).abs();
            if wy <= 0.0 {
                continue;
            }
            for m in m0..=m0 + 1 {
                if m < 0 || m >= sw as isize {
                    continue;
                }
                let wx = 1.0 - (px - m as f64).abs();
                if wx <= 0.0 {
                    continue;
                }
                let w = wx * wy;
                for ch in 0..c {
                    let v = src.get(n as usize, m as usize, ch);
                    let cur = out.get(oy, ox, ch);
                    out.set(oy, ox, ch, cur + w * v);
                }
            }
        }
    }
    out
}

/// The sampler's Jacobian with respect to the source image: forward
/// application equals `grid_sample`, transposed application scatters an
/// output-shaped gradient back onto the source.
pub struct SampleJacobian<'a> {
    grid: &'a SampleGrid,
    src_height: usize,
    src_width: usize,
}

pub fn sample_grad_image<'a>(
    grid: &'a SampleGrid,
    src_height: usize,
    src_width: usize,
) -> SampleJacobian<'a> {
    SampleJacobian {
        grid,
        src_height,
        src_width,
    }
}

impl SampleJacobian<'_> {
    pub fn apply(&self, src: &Image) -> Image {
        grid_sample(src, self.grid)
    }

    /// Accumulates `out_grad` back to source pixels with the same bilinear
    /// weights (deterministic row-major scatter order).
    pub fn apply_transpose(&self, out_grad: &Image) -> Image {
        let c = out_grad.channels();
        let mut src_grad =
            Image::zeros(self.src_height, self.src_width, c).expect("source dims validated");
        for (i, &(xs, ys)) in self.grid.coords.iter().enumerate() {
            let px = to_pixel(xs, self.src_width);
            let py = to_pixel(ys, self.src_height);
            let m0 = px.floor() as isize;
            let n0 = py.floor() as isize;
            let oy = i / self.grid.width;
            let ox = i % self.grid.width;
            for n in n0..=n0 + 1 {
                if n < 0 || n >= self.src_height as isize {
                    continue;
                }
                let wy = 1.0 - (py - n as f64).abs();
                if wy <= 0.0 {
                    continue;
                }
                for m in m0..=m0 + 1 {
                    if m < 0 || m >= self.src_width as isize {
                        continue;
                    }
                    let wx = 1.0 - (px - m as f64).abs();
                    if wx <= 0.0 {
                        continue;
                    }
                    let w = wx * wy;
                    for ch in 0..c {
                        let cur = src_grad.get(n as usize, m as usize, ch);
                        src_grad.set(n as usize, m as usize, ch, cur + w * out_grad.get(oy, ox, ch));
                    }
                }
            }
        }
        src_grad
    }
}

/// Piecewise slope of the bilinear kernel: 0 outside the unit support,
/// +1 when the tap is at or right of the coordinate, -1 when left of it.
#[inline]
fn kernel_slope(coord: f64, tap: f64) -> f64 {
    if (tap - coord).abs() >= 1.0 {
        0.0
    } else if tap >= coord {
        1.0
    } else {
        -1.0
    }
}

/// Analytic per-pixel derivatives of the sampled output with respect to the
/// source coordinates, in pixel units. Returned pair is (d/dx, d/dy), each
/// shaped like the sampled output.
pub fn sample_grad_coords(src: &Image, grid: &SampleGrid) -> (Image, Image) {
    let (sh, sw, c) = (src.height(), src.width(), src.channels());
    let mut gx = Image::zeros(grid.height, grid.width, c).expect("grid dims validated");
    let mut gy = Image::zeros(grid.height, grid.width, c).expect("grid dims validated");
    for (i, &(xs, ys)) in grid.coords.iter().enumerate() {
        let px = to_pixel(xs, sw);
        let py = to_pixel(ys, sh);
        let m0 = px.floor() as isize;
        let n0 = py.floor() as isize;
        let oy = i / grid.width;
        let ox = i % grid.width;
        for n in n0 - 1..=n0 + 2 {
            if n < 0 || n >= sh as isize {
                continue;
            }
            let nf = n as f64;
            let wy = (1.0 - (py - nf).abs()).max(0.0);
            let sy = kernel_slope(py, nf);
            for m in m0 - 1..=m0 + 2 {
                if m < 0 || m >= sw as isize {
                    continue;
                }
                let mf = m as f64;
                let wx = (1.0 - (px - mf).abs()).max(0.0);
                let sx = kernel_slope(px, mf);
                if wx == 0.0 && wy == 0.0 {
                    continue;
                }
                for ch in 0..c {
                    let v = src.get(n as usize, m as usize, ch);
                    if sx != 0.0 && wy > 0.0 {
                        let cur = gx.get(oy, ox, ch);
                        gx.set(oy, ox, ch, cur + v * wy * sx);
                    }
                    if sy != 0.0 && wx > 0.0 {
                        let cur = gy.get(oy, ox, ch);
                        gy.set(oy, ox, ch, cur + v * wx * sy);
                    }
                }
            }
        }
    }
    (gx, gy)
}
