//! Machine-readable run artifacts: the per-command run manifest, the truth
//! manifest emitted by the synthesizer, per-object recovery files and the
//! evaluation report. All are JSON; the solver config file is TOML with
//! exactly the `SolverConfig` field names.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::affine::AffineParams;
use crate::error::{Error, Result};
use crate::solver::{ObjectiveComponents, SolverConfig};

/// Written next to the outputs once a command completes. Deliberately
/// contains no timestamps or durations so that identical runs produce
/// byte-identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: SolverConfig,
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Final per-term losses, one entry per extracted object; empty for
    /// commands that run no optimization.
    pub final_losses: Vec<LossSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub object: String,
    pub data: f64,
    pub tv: f64,
    pub prior: f64,
    pub total: f64,
}

impl LossSummary {
    pub fn new(object: String, c: &ObjectiveComponents) -> Self {
        Self {
            object,
            data: c.data,
            tv: c.tv,
            prior: c.prior,
            total: c.total(),
        }
    }
}

/// Ground-truth record written by `synthesize`, consumed by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthManifest {
    pub params: AffineParams,
    pub n_frames: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Per-object recovery record written by `extract`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRecord {
    pub params: AffineParams,
    pub loss_trace: Vec<Vec<f64>>,
}

/// Evaluation report: per-frame and mean PSNR/SSIM plus parameter errors.
/// A `null` PSNR encodes the infinite (identical images) sentinel; the mean
/// is `null` whenever any contributing frame is infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub frames: Vec<FrameMetrics>,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: f64,
    /// Absent when no recovered parameters were found next to the results.
    pub params: Option<ParamErrors>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    /// 1-based frame index.
    pub frame: usize,
    pub psnr: Option<f64>,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamErrors {
    /// |recovered - truth| per theta entry, row order.
    pub absolute: [f64; 6],
    /// absolute error / max(|truth|, 1e-9) per entry.
    pub relative: [f64; 6],
}

impl ParamErrors {
    pub fn between(recovered: &AffineParams, truth: &AffineParams) -> Self {
        let r = recovered.theta();
        let t = truth.theta();
        let absolute = std::array::from_fn(|j| (r[j] - t[j]).abs());
        let relative = std::array::from_fn(|j| absolute[j] / t[j].abs().max(1e-9));
        Self { absolute, relative }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Loads a TOML solver config; missing fields fall back to the built-in
/// defaults.
pub fn load_config(path: &Path) -> Result<SolverConfig> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let cfg: SolverConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}
