//! Command-line front end: `extract`, `synthesize` and `evaluate`.
//!
//! Config precedence for `extract`: built-in defaults, overridden by the
//! optional TOML config file, overridden by explicit flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::affine::{grid_generate, grid_sample, AffineParams};
use crate::error::{Error, Result};
use crate::formation::synthesize_case;
use crate::imaging::{load_image, metrics, save_image};
use crate::manifest::{
    load_config, read_json, write_json, EvaluationReport, FrameMetrics, LossSummary, ParamErrors,
    RecoveryRecord, RunManifest, TruthManifest,
};
use crate::segmentation::AlphaMap;
use crate::solver::{extract, objective, SolverConfig};

#[derive(Parser)]
#[command(
    name = "blurclip",
    version,
    about = "Extracts an N-frame sharp video clip from a single motion-blurred image",
    long_about = "Extracts an N-frame sharp video clip from a single motion-blurred image.\n\n\
Solver configuration precedence (extract): built-in defaults are overridden \
by values in the optional --config TOML file, which are in turn overridden \
by explicit flags (--frames, --seed)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Recover an N-frame clip from a blurred image and per-object alpha maps
    Extract(ExtractArgs),
    /// Render a synthetic blurred test case with known ground truth
    Synthesize(SynthesizeArgs),
    /// Compare a result directory against a truth directory
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct ExtractArgs {
    /// Motion-blurred input image
    #[arg(long)]
    blurred: PathBuf,
    /// Alpha map, one per object; repeat the flag for multiple objects
    #[arg(long = "alpha", required = true)]
    alpha: Vec<PathBuf>,
    /// Optional TOML solver config (field names match SolverConfig)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of output frames (odd); overrides the config file
    #[arg(long)]
    frames: Option<usize>,
    /// RNG seed; overrides the config file
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthesizeArgs {
    /// Sharp source image
    #[arg(long)]
    sharp: PathBuf,
    /// Middle-frame alpha map of the moving object
    #[arg(long)]
    alpha: PathBuf,
    /// Motion spec: "translate M" | "rotate R" | "zoom Z" | "matrix a b c d e f"
    #[arg(long)]
    motion: String,
    /// Number of frames (odd)
    #[arg(long, default_value_t = 7)]
    frames: usize,
    /// Gaussian noise sigma added to the blurred image
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// RNG seed for the noise
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory with frame_XX.png results (and optionally params.json)
    #[arg(long)]
    result: PathBuf,
    /// Directory with ground-truth frame_XX.png and truth.json
    #[arg(long)]
    truth: PathBuf,
}

/// Parses CLI arguments from the process environment, runs the selected
/// command, and returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Extract(args) => cmd_extract(&args),
        Command::Synthesize(args) => cmd_synthesize(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Defaults < config file < flags.
pub fn resolve_config(
    config_path: Option<&Path>,
    frames: Option<usize>,
    seed: Option<u64>,
) -> Result<SolverConfig> {
    let mut cfg = match config_path {
        Some(path) => load_config(path)?,
        None => SolverConfig::default(),
    };
    if let Some(n) = frames {
        cfg.n_frames = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// "translate M" | "rotate R" | "zoom Z" | "matrix t11 t12 t13 t21 t22 t23".
pub fn parse_motion(spec: &str) -> Result<AffineParams> {
    let tokens: Vec<&str> = spec.split_whitespace().collect();
    let bad = |msg: &str| Error::InvalidParameter(format!("motion spec '{spec}': {msg}"));
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| bad(&format!("'{s}' is not a number")))
    };
    match tokens.as_slice() {
        ["translate", m] => AffineParams::translation_only(num(m)?, 0.0),
        ["rotate", r] => {
            let r = num(r)?;
            AffineParams::new([[r.cos(), -r.sin()], [r.sin(), r.cos()]], [0.0, 0.0])
        }
        ["zoom", z] => {
            let z = num(z)?;
            AffineParams::new([[z, 0.0], [0.0, z]], [0.0, 0.0])
        }
        ["matrix", rest @ ..] if rest.len() == 6 => {
            let mut theta = [0.0; 6];
            for (t, s) in theta.iter_mut().zip(rest) {
                *t = num(s)?;
            }
            AffineParams::from_theta(theta)
        }
        _ => Err(bad(
            "expected 'translate M', 'rotate R', 'zoom Z' or 'matrix t11 t12 t13 t21 t22 t23'",
        )),
    }
}

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:02}.png")
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn object_label(index: usize) -> String {
    format!("object_{:02}", index + 1)
}

fn cmd_extract(args: &ExtractArgs) -> Result<()> {
    let cfg = resolve_config(args.config.as_deref(), args.frames, args.seed)?;
    let blurred = load_image(&args.blurred)?;
    create_dir(&args.out)?;
    let multi = args.alpha.len() > 1;

    let mut losses = Vec::with_capacity(args.alpha.len());
    let mut recovered = Vec::with_capacity(args.alpha.len());
    for (idx, alpha_path) in args.alpha.iter().enumerate() {
        let alpha = AlphaMap::new(load_image(alpha_path)?)?;
        let result = extract(&blurred, &alpha, &cfg)?;
        let (_, components) = objective(&result.state, &result.params, &blurred, &alpha, &cfg)?;
        let obj_dir = if multi {
            args.out.join(object_label(idx))
        } else {
            args.out.clone()
        };
        create_dir(&obj_dir)?;
        for (i, frame) in result.clip.frames.iter().enumerate() {
            save_image(frame, &obj_dir.join(frame_name(i + 1)))?;
        }
        write_json(
            &obj_dir.join("params.json"),
            &RecoveryRecord {
                params: result.params,
                loss_trace: result.loss_trace.clone(),
            },
        )?;
        losses.push(LossSummary::new(object_label(idx), &components));
        recovered.push(result);
    }

    if multi {
        let composite_dir = args.out.join("composite");
        create_dir(&composite_dir)?;
        let n = cfg.n_frames;
        let m = (n + 1) / 2;
        for i in 1..=n {
            let k = i as i32 - m as i32;
            // objects alpha-blended over the first object's background,
            // in alpha-argument order
            let mut canvas = recovered[0].state.background.clone();
            for result in &recovered {
                let step = result.params.step_transform(k)?;
                let grid = grid_generate(&step, canvas.height(), canvas.width())?;
                let fg = grid_sample(&result.state.foreground, &grid);
                let mask = grid_sample(&result.state.middle_mask, &grid);
                for y in 0..canvas.height() {
                    for x in 0..canvas.width() {
                        let mv = mask.get(y, x, 0);
                        for ch in 0..canvas.channels() {
                            let v = mv * fg.get(y, x, ch) + (1.0 - mv) * canvas.get(y, x, ch);
                            canvas.set(y, x, ch, v);
                        }
                    }
                }
            }
            save_image(&canvas, &composite_dir.join(frame_name(i)))?;
        }
    }

    let mut inputs = vec![args.blurred.clone()];
    inputs.extend(args.alpha.iter().cloned());
    write_json(
        &args.out.join("manifest.json"),
        &RunManifest {
            command: "extract".into(),
            config: cfg,
            inputs,
            out_dir: args.out.clone(),
            seed: cfg.seed,
            final_losses: losses,
        },
    )?;
    println!(
        "extracted {} frame(s) x {} object(s) into {}",
        cfg.n_frames,
        args.alpha.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_synthesize(args: &SynthesizeArgs) -> Result<()> {
    let sharp = load_image(&args.sharp)?;
    let alpha_truth = load_image(&args.alpha)?;
    let params = parse_motion(&args.motion)?;
    let case = synthesize_case(
        &sharp,
        &alpha_truth,
        &params,
        args.frames,
        args.noise,
        args.seed,
    )?;
    create_dir(&args.out)?;
    save_image(&case.blurred, &args.out.join("blurred.png"))?;
    save_image(case.alpha.image(), &args.out.join("alpha.png"))?;
    for (i, frame) in case.truth.frames.iter().enumerate() {
        save_image(frame, &args.out.join(frame_name(i + 1)))?;
    }
    write_json(
        &args.out.join("truth.json"),
        &TruthManifest {
            params,
            n_frames: args.frames,
            noise_sigma: args.noise,
            seed: args.seed,
        },
    )?;
    let cfg = SolverConfig {
        n_frames: args.frames,
        seed: args.seed,
        ..SolverConfig::default()
    };
    write_json(
        &args.out.join("manifest.json"),
        &RunManifest {
            command: "synthesize".into(),
            config: cfg,
            inputs: vec![args.sharp.clone(), args.alpha.clone()],
            out_dir: args.out.clone(),
            seed: args.seed,
            final_losses: vec![],
        },
    )?;
    println!(
        "synthesized {} truth frame(s) into {}",
        args.frames,
        args.out.display()
    );
    Ok(())
}

/// Sorted frame_XX.png paths directly inside `dir`.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut frames = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(middle) = name.strip_prefix("frame_").and_then(|s| s.strip_suffix(".png")) {
            if !middle.is_empty() && middle.bytes().all(|b| b.is_ascii_digit()) {
                frames.push(entry.path());
            }
        }
    }
    frames.sort();
    Ok(frames)
}

fn load_result_params(dir: &Path) -> Option<AffineParams> {
    if let Ok(rec) = read_json::<RecoveryRecord>(&dir.join("params.json")) {
        return Some(rec.params);
    }
    if let Ok(truth) = read_json::<TruthManifest>(&dir.join("truth.json")) {
        return Some(truth.params);
    }
    None
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let result_frames = list_frames(&args.result)?;
    let truth_frames = list_frames(&args.truth)?;
    if result_frames.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no frame_XX.png files in {}",
            args.result.display()
        )));
    }
    if result_frames.len() != truth_frames.len() {
        return Err(Error::ShapeMismatch(format!(
            "frame count mismatch: {} result vs {} truth",
            result_frames.len(),
            truth_frames.len()
        )));
    }

    let mut frames = Vec::with_capacity(result_frames.len());
    let mut psnr_sum = Some(0.0f64);
    let mut ssim_sum = 0.0;
    for (i, (rp, tp)) in result_frames.iter().zip(&truth_frames).enumerate() {
        let r = load_image(rp)?;
        let t = load_image(tp)?;
        let m = metrics(&r, &t)?;
        let psnr = m.psnr.is_finite().then_some(m.psnr);
        psnr_sum = match (psnr_sum, psnr) {
            (Some(acc), Some(p)) => Some(acc + p),
            _ => None,
        };
        ssim_sum += m.ssim;
        frames.push(FrameMetrics {
            frame: i + 1,
            psnr,
            ssim: m.ssim,
        });
    }
    let count = frames.len() as f64;
    let truth_manifest: Option<TruthManifest> = read_json(&args.truth.join("truth.json")).ok();
    let params = match (load_result_params(&args.result), truth_manifest) {
        (Some(recovered), Some(truth)) => Some(ParamErrors::between(&recovered, &truth.params)),
        _ => None,
    };
    let report = EvaluationReport {
        mean_psnr: psnr_sum.map(|s| s / count),
        mean_ssim: ssim_sum / count,
        frames,
        params,
    };
    write_json(&args.result.join("evaluation.json"), &report)?;
    write_json(
        &args.result.join("evaluation_manifest.json"),
        &RunManifest {
            command: "evaluate".into(),
            config: SolverConfig::default(),
            inputs: vec![args.result.clone(), args.truth.clone()],
            out_dir: args.result.clone(),
            seed: 0,
            final_losses: vec![],
        },
    )?;
    match report.mean_psnr {
        Some(p) => println!("mean psnr {p:.3} dB, mean ssim {:.5}", report.mean_ssim),
        None => println!("mean psnr inf dB, mean ssim {:.5}", report.mean_ssim),
    }
    Ok(())
}
