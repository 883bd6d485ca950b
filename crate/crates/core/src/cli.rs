//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::bench::{estimate_noise_mad, psnr, synthesize_burst, weight_diagnostics, SynthesisParams};
use crate::config::{FbaConfig, MaskMode};
use crate::error::{Error, Result};
use crate::flow::{estimate_flow_pair, FlowParams};
use crate::io::{
    format_index, read_frame, read_frame_sequence, write_contributions, write_flow_flo, write_frame,
    write_iteration_report, write_plane_scaled, write_psnr_table, SequenceSpec,
};
use crate::pipeline::{deblur_frame_detailed, deblur_sequence};
use crate::register::{binary_consistency, refine_mask};
use crate::warp::roundtrip_map;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "burstfuse", version, about = "Remove camera shake from hand-held video frame sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Restore every frame of a numbered sequence.
    Deblur(DeblurArgs),
    /// Synthetic bursts and quality tables.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Estimate forward/backward flow between two frames and dump diagnostics.
    Flow(FlowArgs),
}

/// Fusion settings shared by subcommands; unset flags fall back to the
/// config file, then to the built-in defaults.
#[derive(Debug, Default, Args)]
pub struct FusionFlags {
    /// TOML file with optional [fusion] and [flow] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Temporal half window (2M+1 frames are fused).
    #[arg(long = "M")]
    pub half_window: Option<usize>,
    #[arg(long)]
    pub block: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Fourier weight exponent.
    #[arg(long)]
    pub p: Option<f64>,
    /// Forward/backward consistency tolerance in pixels.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Unsharp-mask amount applied after the last pass.
    #[arg(long)]
    pub sharpen: Option<f64>,
    #[arg(long = "flow-scale")]
    pub flow_scale: Option<f64>,
    /// conservative or literal.
    #[arg(long = "mask-mode")]
    pub mask_mode: Option<MaskMode>,
}

impl std::str::FromStr for FrameRange {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| format!("expected a..b, got {s:?}"))?;
        let first = a.trim().parse().map_err(|_| format!("bad range start {a:?}"))?;
        let last = b
            .trim_start_matches('=')
            .trim()
            .parse()
            .map_err(|_| format!("bad range end {b:?}"))?;
        if last < first {
            return Err(format!("empty range {s:?}"));
        }
        Ok(FrameRange { first, last })
    }
}

/// Inclusive frame index range written `a..b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameRange {
    pub first: usize,
    pub last: usize,
}

#[derive(Debug, Args)]
pub struct DeblurArgs {
    /// printf-style input pattern, e.g. frames/f%04d.png.
    #[arg(long)]
    pub input: String,
    /// Output directory.
    #[arg(long)]
    pub output: PathBuf,
    /// Inclusive index range, e.g. 1..14.
    #[arg(long)]
    pub frames: FrameRange,
    /// Output file name pattern (default: the input file name pattern).
    #[arg(long = "output-pattern")]
    pub output_pattern: Option<String>,
    #[command(flatten)]
    pub fusion: FusionFlags,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Write iteration, weight and mask diagnostics here.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    /// Run on a single worker thread.
    #[arg(long = "seedless-deterministic")]
    pub seedless_deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Blur and noise a sharp image into a synthetic burst.
    Synth(SynthArgs),
    /// PSNR of a sequence against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Sharp source image.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub frames: usize,
    #[arg(long = "kernel-size", default_value_t = 9)]
    pub kernel_size: usize,
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    #[arg(long = "step-std", default_value_t = 1.0)]
    pub step_std: f64,
    /// Noise std on [0, 1] data.
    #[arg(long, default_value_t = 2.0 / 255.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Render this frame without blur.
    #[arg(long)]
    pub lucky: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground truth: a single image or a printf-style pattern.
    #[arg(long)]
    pub reference: String,
    /// printf-style pattern of the frames to score.
    #[arg(long)]
    pub input: String,
    #[arg(long)]
    pub frames: FrameRange,
    /// Write the table here instead of standard output.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub other: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub fusion: FusionFlags,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    fusion: FbaConfig,
    #[serde(default)]
    flow: FlowParams,
}

impl FusionFlags {
    /// Flag values over config file values over defaults.
    pub fn resolve(&self) -> Result<(FbaConfig, FlowParams)> {
        let file = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e.to_string()))?;
                toml::from_str::<ConfigFile>(&text).map_err(|e| Error::file(path, e.to_string()))?
            }
            None => ConfigFile::default(),
        };
        let mut cfg = file.fusion;
        if let Some(v) = self.half_window {
            cfg.half_window = v;
        }
        if let Some(v) = self.block {
            cfg.block_size = v;
        }
        if let Some(v) = self.stride {
            cfg.stride = v;
        }
        if let Some(v) = self.p {
            cfg.exponent = v;
        }
        if let Some(v) = self.epsilon {
            cfg.consistency_tol = v;
        }
        if let Some(v) = self.iterations {
            cfg.iterations = v;
        }
        if let Some(v) = self.sharpen {
            cfg.sharpen_amount = v;
        }
        if let Some(v) = self.flow_scale {
            cfg.flow_scale = v;
        }
        if let Some(v) = self.mask_mode {
            cfg.mask_mode = v;
        }
        cfg.validate()?;
        file.flow.validate()?;
        Ok((cfg, file.flow))
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Deblur(args) => {
            let threads = if args.seedless_deterministic {
                Some(1)
            } else {
                args.threads
            };
            match threads {
                Some(n) => {
                    let pool = rayon::ThreadPoolBuilder::new()
                        .num_threads(n.max(1))
                        .build()
                        .map_err(|e| Error::Config(e.to_string()))?;
                    pool.install(|| run_deblur(&args))
                }
                None => run_deblur(&args),
            }
        }
        Command::Bench(BenchCommand::Synth(args)) => run_synth(&args),
        Command::Bench(BenchCommand::Eval(args)) => run_eval(&args),
        Command::Flow(args) => run_flow(&args),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e.to_string()))
}

fn run_deblur(args: &DeblurArgs) -> Result<()> {
    let (cfg, params) = args.fusion.resolve()?;
    let spec = SequenceSpec {
        input_pattern: args.input.clone(),
        first: args.frames.first,
        last: args.frames.last,
        output_dir: Some(args.output.clone()),
        output_pattern: args.output_pattern.clone(),
    };
    let outputs = spec.output_paths()?;
    let frames = read_frame_sequence(&spec)?;
    let (restored, report) = deblur_sequence(&frames, &cfg, &params)?;
    create_dir(&args.output)?;
    for (path, frame) in outputs.iter().zip(&restored) {
        write_frame(path, frame)?;
    }
    if let Some(dir) = &args.diagnostics {
        create_dir(dir)?;
        write_iteration_report(&dir.join("iteration_report.csv"), &report)?;
        write_first_pass_diagnostics(dir, &frames, &cfg, &params, spec.first)?;
    }
    Ok(())
}

fn write_first_pass_diagnostics(
    dir: &Path,
    frames: &[crate::frame::Frame],
    cfg: &FbaConfig,
    params: &FlowParams,
    first_index: usize,
) -> Result<()> {
    let csv = dir.join("contributions.csv");
    let mut noise_rows = Vec::with_capacity(frames.len());
    for i in 0..frames.len() {
        let (out, stack) = deblur_frame_detailed(frames, i, cfg, params)?;
        let diag = weight_diagnostics(&stack, cfg)?;
        write_contributions(&csv, first_index + i, stack.ref_index, &diag.contributions, i > 0)?;
        for (k, mask) in stack.masks.iter().enumerate() {
            if k == stack.ref_index {
                continue;
            }
            let offset = k as i64 - stack.ref_index as i64;
            let name = format!("mask_{:04}_{offset:+}.png", first_index + i);
            write_plane_scaled(&dir.join(name), mask.plane(), 0.0, 1.0)?;
        }
        noise_rows.push((first_index + i, estimate_noise_mad(&frames[i]), estimate_noise_mad(&out)));
    }
    let path = dir.join("noise.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::file(&path, e.to_string()))?;
    let fail = |e: csv::Error| Error::file(&path, e.to_string());
    w.write_record(["frame", "input_noise", "output_noise"]).map_err(fail)?;
    for (i, a, b) in noise_rows {
        w.write_record([i.to_string(), format!("{a:.6}"), format!("{b:.6}")])
            .map_err(fail)?;
    }
    w.flush()?;
    Ok(())
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let sharp = read_frame(&args.input)?;
    let params = SynthesisParams {
        num_frames: args.frames,
        kernel_size: args.kernel_size,
        tremor_steps: args.steps,
        tremor_step_std: args.step_std,
        noise_std: args.noise,
        lucky_frame: args.lucky,
        rng_seed: args.seed,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let (frames, kernels) = synthesize_burst(&sharp, &params, &mut rng)?;
    create_dir(&args.output)?;
    for (i, (f, k)) in frames.iter().zip(&kernels).enumerate() {
        write_frame(&args.output.join(format!("frame_{i:04}.png")), f)?;
        let peak = k.plane().as_slice().iter().copied().fold(0.0, f64::max);
        write_plane_scaled(&args.output.join(format!("kernel_{i:04}.png")), k.plane(), 0.0, peak)?;
    }
    Ok(())
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    let spec = SequenceSpec::new(args.input.clone(), args.frames.first, args.frames.last);
    let frames = read_frame_sequence(&spec)?;
    let single_reference = !args.reference.contains('%');
    let fixed = if single_reference {
        Some(read_frame(Path::new(&args.reference))?)
    } else {
        None
    };
    let mut rows = Vec::with_capacity(frames.len());
    for (k, f) in frames.iter().enumerate() {
        let index = args.frames.first + k;
        let value = match &fixed {
            Some(r) => psnr(f, r)?,
            None => psnr(f, &read_frame(Path::new(&format_index(&args.reference, index)?))?)?,
        };
        rows.push((index, value));
    }
    match &args.csv {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| Error::file(path, e.to_string()))?;
            write_psnr_table(file, &rows)
        }
        None => write_psnr_table(std::io::stdout().lock(), &rows),
    }
}

fn run_flow(args: &FlowArgs) -> Result<()> {
    let (cfg, params) = args.fusion.resolve()?;
    let reference = read_frame(&args.reference)?;
    let other = read_frame(&args.other)?;
    let (fwd, bwd) = estimate_flow_pair(&reference, &other, &cfg, &params)?;
    let cmap = roundtrip_map(&fwd, &bwd)?;
    let mask = refine_mask(
        &binary_consistency(&cmap, cfg.consistency_tol),
        cfg.mask_radius,
        cfg.mask_sigma,
        cfg.mask_mode,
    );
    create_dir(&args.output)?;
    write_flow_flo(&args.output.join("forward.flo"), &fwd)?;
    write_flow_flo(&args.output.join("backward.flo"), &bwd)?;
    write_plane_scaled(
        &args.output.join("consistency_map.png"),
        cmap.plane(),
        0.0,
        (2.0 * cfg.consistency_tol).max(1e-6),
    )?;
    write_plane_scaled(&args.output.join("consistency_mask.png"), mask.plane(), 0.0, 1.0)?;
    Ok(())
}
