//! blurclip extracts an N-frame sharp video clip from a single
//! motion-blurred image. The blur is modeled as the temporal average of N
//! latent frames, each an affine warp of one reference frame composited
//! over a static background; the reference frame and the six affine
//! parameters are recovered jointly by alternating gradient descent with
//! TV and alpha-channel regularization, run coarse-to-fine over three
//! scales.

pub mod affine;
pub mod cli;
pub mod error;
pub mod formation;
pub mod imaging;
pub mod manifest;
pub mod regularization;
pub mod segmentation;
pub mod solver;

pub use error::{Error, Result};
