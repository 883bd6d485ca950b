//! Synthetic ground truth and quality measurements.
//!
//! Camera shake is simulated as a Gaussian random walk rasterized into a
//! small point-spread function; bursts are the sharp image convolved with
//! independent kernels plus white noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::FbaConfig;
use crate::error::{Error, Result};
use crate::fba::fusion_weights;
use crate::frame::{crop, mirror_pad, reflect_index, Frame, Plane};
use crate::grid::make_block_grid;
use crate::register::RegisteredStack;

/// Nonnegative, unit-sum blur kernel with its centroid at the center pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel(Plane);

impl Kernel {
    pub fn delta(size: usize) -> Self {
        let mut p = Plane::zeros(size, size);
        p.set(size / 2, size / 2, 1.0);
        Kernel(p)
    }

    pub fn from_plane(plane: Plane) -> Result<Self> {
        if plane.height() != plane.width() || plane.height() % 2 == 0 {
            return Err(Error::Input("kernel must be square with odd size".into()));
        }
        if plane.as_slice().iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Input("kernel entries must be nonnegative".into()));
        }
        let sum: f64 = plane.as_slice().iter().sum();
        if !(sum > 0.0) {
            return Err(Error::Input("kernel must have positive mass".into()));
        }
        Ok(Kernel(plane.map(|v| v / sum)))
    }

    pub fn size(&self) -> usize {
        self.0.height()
    }

    pub fn plane(&self) -> &Plane {
        &self.0
    }

    /// Centroid `(row, col)`.
    pub fn centroid(&self) -> (f64, f64) {
        let (mut cy, mut cx) = (0.0, 0.0);
        for y in 0..self.size() {
            for x in 0..self.size() {
                let v = self.0.get(y, x);
                cy += v * y as f64;
                cx += v * x as f64;
            }
        }
        (cy, cx)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisParams {
    pub num_frames: usize,
    /// Odd kernel side.
    pub kernel_size: usize,
    pub tremor_steps: usize,
    /// Std of each random-walk increment, in pixels.
    pub tremor_step_std: f64,
    /// Std of the additive white noise on `[0, 1]` data.
    pub noise_std: f64,
    /// Frame rendered with the identity kernel, if any.
    pub lucky_frame: Option<usize>,
    pub rng_seed: u64,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        SynthesisParams {
            num_frames: 7,
            kernel_size: 9,
            tremor_steps: 8,
            tremor_step_std: 1.0,
            noise_std: 2.0 / 255.0,
            lucky_frame: None,
            rng_seed: 0,
        }
    }
}

impl SynthesisParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_frames == 0 || self.tremor_steps == 0 {
            return Err(Error::Config("num_frames and tremor_steps must be >= 1".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if !(self.tremor_step_std >= 0.0 && self.noise_std >= 0.0) {
            return Err(Error::Config("standard deviations must be >= 0".into()));
        }
        if let Some(l) = self.lucky_frame {
            if l >= self.num_frames {
                return Err(Error::Config(format!("lucky_frame {l} out of range")));
            }
        }
        Ok(())
    }
}

const MAX_TRAJECTORY_ATTEMPTS: usize = 20;
const SAMPLE_SPACING: f64 = 0.25;

/// Time-uniform samples `(y, x, weight)` along a random-walk trajectory,
/// translated so their weighted centroid is the origin.
fn trajectory_samples<R: Rng + ?Sized>(steps: usize, std: f64, rng: &mut R) -> Vec<(f64, f64, f64)> {
    let normal = Normal::new(0.0, std.max(0.0)).expect("std >= 0");
    let mut points = vec![(0.0f64, 0.0f64)];
    for _ in 0..steps {
        let (y, x) = *points.last().unwrap();
        let (dy, dx) = if std > 0.0 {
            (normal.sample(rng), normal.sample(rng))
        } else {
            (0.0, 0.0)
        };
        points.push((y + dy, x + dx));
    }
    let seg_weight = 1.0 / steps as f64;
    let mut samples = Vec::new();
    for pair in points.windows(2) {
        let ((y0, x0), (y1, x1)) = (pair[0], pair[1]);
        let len = (y1 - y0).hypot(x1 - x0);
        let n = ((len / SAMPLE_SPACING).ceil() as usize).max(1);
        for j in 0..n {
            let t = (j as f64 + 0.5) / n as f64;
            samples.push((y0 + t * (y1 - y0), x0 + t * (x1 - x0), seg_weight / n as f64));
        }
    }
    let (cy, cx) = samples
        .iter()
        .fold((0.0, 0.0), |(a, b), &(y, x, w)| (a + w * y, b + w * x));
    samples
        .iter()
        .map(|&(y, x, w)| (y - cy, x - cx, w))
        .collect()
}

/// Random hand-tremor kernel. Trajectories that do not fit the grid are
/// redrawn; if none fits, the last one is shrunk about its centroid.
pub fn simulate_tremor_kernel<R: Rng + ?Sized>(params: &SynthesisParams, rng: &mut R) -> Result<Kernel> {
    params.validate()?;
    let k = params.kernel_size;
    let half = (k - 1) as f64 / 2.0;
    let extent = |s: &[(f64, f64, f64)]| {
        s.iter()
            .map(|&(y, x, _)| y.abs().max(x.abs()))
            .fold(0.0, f64::max)
    };
    let mut samples = trajectory_samples(params.tremor_steps, params.tremor_step_std, rng);
    let mut attempts = 1;
    while extent(&samples) > half && attempts < MAX_TRAJECTORY_ATTEMPTS {
        samples = trajectory_samples(params.tremor_steps, params.tremor_step_std, rng);
        attempts += 1;
    }
    let e = extent(&samples);
    if e > half {
        let s = half / e;
        samples.iter_mut().for_each(|p| {
            p.0 *= s;
            p.1 *= s;
        });
    }
    let mut grid = Plane::zeros(k, k);
    for (y, x, w) in samples {
        let (y, x) = (
            (y + half).clamp(0.0, (k - 1) as f64),
            (x + half).clamp(0.0, (k - 1) as f64),
        );
        let y0 = (y.floor() as usize).min(k.saturating_sub(2));
        let x0 = (x.floor() as usize).min(k.saturating_sub(2));
        let (ty, tx) = (y - y0 as f64, x - x0 as f64);
        let y1 = (y0 + 1).min(k - 1);
        let x1 = (x0 + 1).min(k - 1);
        let mut add = |yy: usize, xx: usize, v: f64| grid.set(yy, xx, grid.get(yy, xx) + v);
        add(y0, x0, w * (1.0 - ty) * (1.0 - tx));
        add(y0, x1, w * (1.0 - ty) * tx);
        add(y1, x0, w * ty * (1.0 - tx));
        add(y1, x1, w * ty * tx);
    }
    Kernel::from_plane(grid)
}

/// `plane * kernel` (true convolution) with mirror boundary.
pub fn convolve(plane: &Plane, kernel: &Kernel) -> Plane {
    let (h, w) = plane.dims();
    let k = kernel.size();
    let c = (k / 2) as isize;
    let taps: Vec<(isize, isize, f64)> = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| (i as isize - c, j as isize - c, kernel.plane().get(i, j)))
        .filter(|t| t.2 != 0.0)
        .collect();
    Plane::from_fn(h, w, |y, x| {
        taps.iter()
            .map(|&(dy, dx, v)| {
                v * plane.get(
                    reflect_index(y as isize - dy, h),
                    reflect_index(x as isize - dx, w),
                )
            })
            .sum()
    })
}

/// A burst `v_i = u * k_i + n_i`, clamped to `[0, 1]`.
pub fn synthesize_burst<R: Rng + ?Sized>(
    sharp: &Frame,
    params: &SynthesisParams,
    rng: &mut R,
) -> Result<(Vec<Frame>, Vec<Kernel>)> {
    params.validate()?;
    let noise = Normal::new(0.0, params.noise_std).expect("noise_std >= 0");
    let mut frames = Vec::with_capacity(params.num_frames);
    let mut kernels = Vec::with_capacity(params.num_frames);
    for i in 0..params.num_frames {
        let kernel = if params.lucky_frame == Some(i) {
            Kernel::delta(params.kernel_size)
        } else {
            simulate_tremor_kernel(params, rng)?
        };
        let channels = sharp
            .channels()
            .iter()
            .map(|p| {
                let mut blurred = convolve(p, &kernel);
                for v in blurred.as_mut_slice() {
                    let n = if params.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
                    *v = (*v + n).clamp(0.0, 1.0);
                }
                blurred
            })
            .collect();
        frames.push(Frame::new(channels)?);
        kernels.push(kernel);
    }
    Ok((frames, kernels))
}

/// Peak signal-to-noise ratio in dB for `[0, 1]` data; identical inputs give
/// `f64::INFINITY`.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    a.check_same_shape(b)?;
    let mse = mse(a, b);
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

pub(crate) fn mse(a: &Frame, b: &Frame) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (pa, pb) in a.channels().iter().zip(b.channels()) {
        for (x, y) in pa.as_slice().iter().zip(pb.as_slice()) {
            sum += (x - y) * (x - y);
        }
        n += pa.as_slice().len();
    }
    sum / n as f64
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    values.sort_unstable_by(f64::total_cmp);
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Robust white-noise std estimate: MAD of the 4-neighbour Laplacian
/// response over interior pixels, divided by the stencil's noise gain.
pub fn estimate_noise_mad(frame: &Frame) -> f64 {
    let (h, w) = frame.dims();
    if h < 3 || w < 3 {
        return 0.0;
    }
    let mut resp = Vec::with_capacity(frame.num_channels() * (h - 2) * (w - 2));
    for p in frame.channels() {
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                resp.push(
                    p.get(y - 1, x) + p.get(y + 1, x) + p.get(y, x - 1) + p.get(y, x + 1)
                        - 4.0 * p.get(y, x),
                );
            }
        }
    }
    let med = median(&mut resp);
    let mut dev: Vec<f64> = resp.iter().map(|v| (v - med).abs()).collect();
    1.4826 * median(&mut dev) / 20f64.sqrt()
}

/// How much each registered frame contributed to the fused result.
#[derive(Clone, Debug)]
pub struct WeightDiagnostics {
    /// L2 norm of each frame's weights over all blocks and frequencies,
    /// normalized to sum to one.
    pub contributions: Vec<f64>,
    /// Per frame, the L2 norm of its weights in each block (block-grid shape).
    pub block_norms: Vec<Plane>,
    /// Per frame, its weight plane averaged over blocks, DC moved to the center.
    pub mean_weights: Vec<Plane>,
}

fn fft_shift(p: &Plane) -> Plane {
    let (h, w) = p.dims();
    Plane::from_fn(h, w, |y, x| p.get((y + h - h / 2) % h, (x + w - w / 2) % w))
}

pub fn weight_diagnostics(stack: &RegisteredStack, cfg: &FbaConfig) -> Result<WeightDiagnostics> {
    let first = stack
        .frames
        .first()
        .ok_or_else(|| Error::Input("empty stack".into()))?;
    cfg.validate()?;
    let (h, w) = first.dims();
    let b = cfg.block_size;
    let grid = make_block_grid(h, w, b, cfg.stride)?;
    let padded: Vec<Frame> = stack
        .frames
        .iter()
        .map(|f| mirror_pad(f, grid.pad_margin()))
        .collect::<Result<_>>()?;
    let n = stack.len();
    let (gr, gc) = (grid.row_centers().len(), grid.col_centers().len());
    let mut block_norms = vec![Plane::zeros(gr, gc); n];
    let mut mean_weights = vec![Plane::zeros(b, b); n];
    let mut energy = vec![0.0; n];
    for (bi, &top) in grid.row_centers().iter().enumerate() {
        for (bj, &left) in grid.col_centers().iter().enumerate() {
            let blocks = padded
                .iter()
                .map(|f| crop(f, top, left, b, b))
                .collect::<Result<Vec<_>>>()?;
            let weights = fusion_weights(&blocks, cfg.exponent, cfg.spectrum_sigma())?;
            for (i, wp) in weights.iter().enumerate() {
                let e: f64 = wp.as_slice().iter().map(|v| v * v).sum();
                energy[i] += e;
                block_norms[i].set(bi, bj, e.sqrt());
                for (m, v) in mean_weights[i].as_mut_slice().iter_mut().zip(wp.as_slice()) {
                    *m += v / grid.len() as f64;
                }
            }
        }
    }
    let norms: Vec<f64> = energy.iter().map(|e| e.sqrt()).collect();
    let total: f64 = norms.iter().sum();
    Ok(WeightDiagnostics {
        contributions: norms.iter().map(|v| v / total).collect(),
        block_norms,
        mean_weights: mean_weights.iter().map(fft_shift).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dft_max_modulus(k: &Kernel) -> f64 {
        let n = k.size();
        let mut best: f64 = 0.0;
        for u in 0..n {
            for v in 0..n {
                let (mut re, mut im) = (0.0, 0.0);
                for y in 0..n {
                    for x in 0..n {
                        let a = -2.0 * std::f64::consts::PI * (u * y + v * x) as f64 / n as f64;
                        re += k.plane().get(y, x) * a.cos();
                        im += k.plane().get(y, x) * a.sin();
                    }
                }
                best = best.max(re.hypot(im));
            }
        }
        best
    }

    #[test]
    fn still_hand_gives_delta() {
        let p = SynthesisParams {
            tremor_step_std: 0.0,
            ..Default::default()
        };
        let k = simulate_tremor_kernel(&p, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(k, Kernel::delta(9));
    }

    #[test]
    fn kernels_are_admissible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for std in [0.3, 1.0, 2.5] {
            let p = SynthesisParams {
                tremor_step_std: std,
                ..Default::default()
            };
            for _ in 0..20 {
                let k = simulate_tremor_kernel(&p, &mut rng).unwrap();
                let sum: f64 = k.plane().as_slice().iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert!(k.plane().as_slice().iter().all(|&v| v >= 0.0));
                let (cy, cx) = k.centroid();
                assert!((cy - 4.0).abs() <= 0.5 && (cx - 4.0).abs() <= 0.5, "{cy} {cx}");
                assert!(dft_max_modulus(&k) <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn even_kernel_size_rejected() {
        let p = SynthesisParams {
            kernel_size: 8,
            ..Default::default()
        };
        assert!(simulate_tremor_kernel(&p, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn psnr_cases() {
        let a = Frame::filled(4, 4, 3, 0.2);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = Frame::filled(4, 4, 3, 0.7);
        assert!((psnr(&a, &b).unwrap() - 6.0206).abs() < 1e-4);
        let c = Frame::filled(4, 4, 3, 0.3);
        assert!((psnr(&a, &c).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &Frame::filled(4, 5, 3, 0.2)).is_err());
    }

    #[test]
    fn noiseless_delta_burst_is_exact() {
        let sharp = Frame::from_plane(Plane::from_fn(20, 20, |y, x| ((y + x) % 7) as f64 / 7.0)).unwrap();
        let p = SynthesisParams {
            tremor_step_std: 0.0,
            noise_std: 0.0,
            num_frames: 3,
            ..Default::default()
        };
        let (frames, _) = synthesize_burst(&sharp, &p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(frames.iter().all(|f| *f == sharp));
    }

    #[test]
    fn noise_level_sets_psnr() {
        let sharp = Frame::filled(128, 128, 1, 0.5);
        let p = SynthesisParams {
            tremor_step_std: 0.0,
            noise_std: 0.01,
            num_frames: 1,
            ..Default::default()
        };
        let (frames, _) = synthesize_burst(&sharp, &p, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let v = psnr(&frames[0], &sharp).unwrap();
        assert!((v - 40.0).abs() < 0.5, "{v}");
    }

    #[test]
    fn convolution_with_delta_is_identity() {
        let p = Plane::from_fn(9, 11, |y, x| (y * 11 + x) as f64);
        assert_eq!(convolve(&p, &Kernel::delta(5)), p);
    }

    #[test]
    fn convolution_flips_the_kernel() {
        // A kernel with all mass one pixel right of center shifts content right.
        let mut k = Plane::zeros(3, 3);
        k.set(1, 2, 1.0);
        let k = Kernel::from_plane(k).unwrap();
        let p = Plane::from_fn(5, 5, |_, x| x as f64);
        let out = convolve(&p, &k);
        assert_eq!(out.get(2, 3), 2.0);
    }

    #[test]
    fn noise_estimate_of_constant_is_zero() {
        assert_eq!(estimate_noise_mad(&Frame::filled(16, 16, 3, 0.4)), 0.0);
    }

    #[test]
    fn single_frame_contribution() {
        let f = Frame::from_plane(Plane::from_fn(32, 32, |y, x| ((y * x) % 5) as f64 / 5.0)).unwrap();
        let stack = RegisteredStack::aligned(vec![f], 0).unwrap();
        let cfg = FbaConfig {
            block_size: 16,
            stride: 8,
            ..FbaConfig::default()
        };
        let d = weight_diagnostics(&stack, &cfg).unwrap();
        assert_eq!(d.contributions, vec![1.0]);
    }

    #[test]
    fn identical_frames_contribute_equally() {
        let f = Frame::from_plane(Plane::from_fn(32, 32, |y, x| ((y * 3 + x) % 7) as f64 / 7.0)).unwrap();
        let stack = RegisteredStack::aligned(vec![f; 7], 3).unwrap();
        let cfg = FbaConfig {
            block_size: 16,
            stride: 8,
            ..FbaConfig::default()
        };
        let d = weight_diagnostics(&stack, &cfg).unwrap();
        for c in d.contributions {
            assert!((c - 1.0 / 7.0).abs() < 1e-6);
        }
    }
}
