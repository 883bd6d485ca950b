//! Local Fourier burst accumulation.
//!
//! For every block position the registered frames are transformed, and each
//! frequency of the fused block is the average of the frames' coefficients
//! weighted by `|P_i|^p / sum_j |P_j|^p`, where `|P_i|` is the channel-mean
//! magnitude smoothed by a small periodic Gaussian. Blocks overlap, and the
//! fused blocks are averaged back into the frame.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::config::FbaConfig;
use crate::error::{Error, Result};
use crate::frame::{gaussian_kernel, mirror_pad, Frame, Plane};
use crate::grid::make_block_grid;
use crate::register::RegisteredStack;

/// Unnormalized 2D DFT of a block, one coefficient plane per channel, in
/// natural DFT ordering (DC at index 0).
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum {
    height: usize,
    width: usize,
    channels: Vec<Vec<Complex64>>,
}

impl ComplexSpectrum {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> Complex64 {
        self.channels[c][row * self.width + col]
    }

    pub fn channel(&self, c: usize) -> &[Complex64] {
        &self.channels[c]
    }
}

struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    transposed: Vec<Complex64>,
}

impl Fft2 {
    fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        let row_fwd = planner.plan_fft_forward(width);
        let col_fwd = planner.plan_fft_forward(height);
        let row_inv = planner.plan_fft_inverse(width);
        let col_inv = planner.plan_fft_inverse(height);
        let scratch_len = [&row_fwd, &col_fwd, &row_inv, &col_inv]
            .iter()
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Fft2 {
            height,
            width,
            row_fwd,
            col_fwd,
            row_inv,
            col_inv,
            scratch: vec![Complex64::default(); scratch_len],
            transposed: vec![Complex64::default(); height * width],
        }
    }

    fn transform(&mut self, buf: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.height, self.width);
        let (rows, cols) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        rows.process_with_scratch(buf, &mut self.scratch);
        transpose(buf, &mut self.transposed, h, w);
        cols.process_with_scratch(&mut self.transposed, &mut self.scratch);
        transpose(&self.transposed, buf, w, h);
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], h: usize, w: usize) {
    const TILE: usize = 16;
    for by in (0..h).step_by(TILE) {
        for bx in (0..w).step_by(TILE) {
            for y in by..(by + TILE).min(h) {
                for x in bx..(bx + TILE).min(w) {
                    dst[x * h + y] = src[y * w + x];
                }
            }
        }
    }
}

/// Channel-mean modulus per frequency.
pub fn block_magnitude(spec: &ComplexSpectrum) -> Plane {
    let n = spec.channels.len() as f64;
    let mut out = Plane::zeros(spec.height, spec.width);
    for ch in &spec.channels {
        for (o, z) in out.as_mut_slice().iter_mut().zip(ch) {
            *o += z.norm();
        }
    }
    out.as_mut_slice().iter_mut().for_each(|v| *v /= n);
    out
}

fn periodic_blur_into(data: &mut [f64], tmp: &mut [f64], h: usize, w: usize, taps: &[f64]) {
    let r = (taps.len() / 2) as isize;
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * row[(x as isize + k as isize - r).rem_euclid(w as isize) as usize];
            }
            tmp[y * w + x] = acc;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                let yy = (y as isize + k as isize - r).rem_euclid(h as isize) as usize;
                acc += t * tmp[yy * w + x];
            }
            data[y * w + x] = acc;
        }
    }
}

/// Periodic Gaussian smoothing of a DFT-ordered magnitude plane.
pub fn smooth_magnitude(mag: &Plane, sigma: f64) -> Plane {
    if sigma <= 0.0 {
        return mag.clone();
    }
    let (h, w) = mag.dims();
    let mut out = mag.clone();
    let mut tmp = vec![0.0; h * w];
    periodic_blur_into(out.as_mut_slice(), &mut tmp, h, w, &gaussian_kernel(sigma));
    out
}

/// Unnormalized DFT of every channel of a block.
pub fn block_spectrum(block: &Frame) -> ComplexSpectrum {
    let (h, w) = block.dims();
    let mut fft = Fft2::new(h, w);
    let channels = block
        .channels()
        .iter()
        .map(|p| {
            let mut buf: Vec<Complex64> =
                p.as_slice().iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft.transform(&mut buf, false);
            buf
        })
        .collect();
    ComplexSpectrum {
        height: h,
        width: w,
        channels,
    }
}

/// Reusable per-worker state for fusing one block position at a time.
///
/// Holds the accumulated weighted spectrum and the weight sum (rescaled
/// against the running per-frequency maximum magnitude so `p`-th powers
/// never overflow), plus scratch for the current frame.
pub(crate) struct BlockFuser {
    height: usize,
    width: usize,
    exponent: f64,
    taps: Option<Vec<f64>>,
    fft: Fft2,
    current: Vec<Vec<Complex64>>,
    acc: Vec<Vec<Complex64>>,
    weight_sum: Vec<f64>,
    max_mag: Vec<f64>,
    packed: Vec<Complex64>,
    mag: Vec<f64>,
    tmp: Vec<f64>,
    frames: usize,
}

impl BlockFuser {
    pub(crate) fn new(height: usize, width: usize, exponent: f64, sigma: f64) -> Self {
        let n = height * width;
        BlockFuser {
            height,
            width,
            exponent,
            taps: (sigma > 0.0).then(|| gaussian_kernel(sigma)),
            fft: Fft2::new(height, width),
            current: Vec::new(),
            acc: Vec::new(),
            weight_sum: vec![0.0; n],
            max_mag: vec![0.0; n],
            packed: vec![Complex64::default(); n],
            mag: vec![0.0; n],
            tmp: vec![0.0; n],
            frames: 0,
        }
    }

    fn reset(&mut self, channels: usize) {
        let n = self.height * self.width;
        self.current.resize_with(channels, || vec![Complex64::default(); n]);
        self.acc.resize_with(channels, || vec![Complex64::default(); n]);
        self.current.truncate(channels);
        self.acc.truncate(channels);
        for a in &mut self.acc {
            a.fill(Complex64::default());
        }
        self.weight_sum.fill(0.0);
        self.max_mag.fill(0.0);
        self.frames = 0;
    }

    /// Loads the `height x width` window at `(top, left)` of each plane.
    ///
    /// Channels are real, so they are transformed two at a time as the real
    /// and imaginary parts of one complex block and separated afterwards.
    fn load(&mut self, planes: &[Plane], top: usize, left: usize) {
        let (h, w) = (self.height, self.width);
        for c in (0..planes.len()).step_by(2) {
            let pair = planes.get(c + 1);
            let buf = &mut self.packed;
            for y in 0..h {
                let re = &planes[c].row(top + y)[left..left + w];
                let dst = &mut buf[y * w..(y + 1) * w];
                match pair {
                    Some(p) => {
                        let im = &p.row(top + y)[left..left + w];
                        for ((d, &a), &b) in dst.iter_mut().zip(re).zip(im) {
                            *d = Complex64::new(a, b);
                        }
                    }
                    None => {
                        for (d, &a) in dst.iter_mut().zip(re) {
                            *d = Complex64::new(a, 0.0);
                        }
                    }
                }
            }
            self.fft.transform(buf, false);
            if pair.is_none() {
                self.current[c].copy_from_slice(buf);
                continue;
            }
            let (lo, hi) = self.current.split_at_mut(c + 1);
            let (xa, xb) = (&mut lo[c], &mut hi[0]);
            for u in 0..h {
                let nu = (h - u) % h;
                for v in 0..w {
                    let z = buf[u * w + v];
                    let zc = buf[nu * w + (w - v) % w].conj();
                    xa[u * w + v] = (z + zc) * 0.5;
                    // (z - zc) / 2i
                    let d = z - zc;
                    xb[u * w + v] = Complex64::new(d.im * 0.5, -d.re * 0.5);
                }
            }
        }
        let nc = planes.len() as f64;
        self.mag.fill(0.0);
        for buf in &self.current {
            for (m, z) in self.mag.iter_mut().zip(buf) {
                *m += (z.re * z.re + z.im * z.im).sqrt();
            }
        }
        self.mag.iter_mut().for_each(|m| *m /= nc);
        if let Some(taps) = &self.taps {
            periodic_blur_into(&mut self.mag, &mut self.tmp, h, w, taps);
        }
    }

    fn accumulate(&mut self) {
        let p = self.exponent;
        // Integer exponents (the usual case) take the much cheaper powi.
        let int_p = (p.fract() == 0.0 && p <= i32::MAX as f64).then_some(p as i32);
        let pow = |r: f64| match int_p {
            Some(n) => r.powi(n),
            None => r.powf(p),
        };
        for k in 0..self.mag.len() {
            let m = self.mag[k];
            let mx = self.max_mag[k];
            let weight = if m > mx {
                // New per-frequency maximum: rescale what was accumulated.
                let rescale = if self.frames == 0 { 0.0 } else { pow(mx / m) };
                if rescale != 1.0 {
                    self.weight_sum[k] *= rescale;
                    for a in &mut self.acc {
                        a[k] *= rescale;
                    }
                }
                self.max_mag[k] = m;
                1.0
            } else if mx > 0.0 {
                pow(m / mx)
            } else {
                // Every magnitude so far is zero here: uniform weights.
                1.0
            };
            self.weight_sum[k] += weight;
            for (a, cur) in self.acc.iter_mut().zip(&self.current) {
                a[k] += cur[k] * weight;
            }
        }
        self.frames += 1;
    }

    fn add_block(&mut self, planes: &[Plane], top: usize, left: usize) {
        self.load(planes, top, left);
        self.accumulate();
    }

    /// Inverse transform of the normalized accumulation, one plane per channel.
    ///
    /// Fused spectra of real blocks are Hermitian, so channels are inverted in
    /// pairs as `F_a + i F_b`.
    fn finish(&mut self) -> Vec<Vec<f64>> {
        let norm = (self.height * self.width) as f64;
        let nc = self.acc.len();
        let mut out = vec![Vec::new(); nc];
        for c in (0..nc).step_by(2) {
            let buf = &mut self.packed;
            let has_pair = c + 1 < nc;
            for (k, z) in buf.iter_mut().enumerate() {
                let ws = self.weight_sum[k];
                let a = self.acc[c][k] / ws;
                *z = if has_pair {
                    let b = self.acc[c + 1][k] / ws;
                    Complex64::new(a.re - b.im, a.im + b.re)
                } else {
                    a
                };
            }
            self.fft.transform(buf, true);
            out[c] = buf.iter().map(|z| z.re / norm).collect();
            if has_pair {
                out[c + 1] = buf.iter().map(|z| z.im / norm).collect();
            }
        }
        out
    }
}

fn check_blocks(blocks: &[Frame]) -> Result<()> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::Input("need at least one block to fuse".into()))?;
    for b in &blocks[1..] {
        first.check_same_shape(b)?;
    }
    Ok(())
}

/// Fuses co-located blocks of a burst into one block.
pub fn fuse_blocks(blocks: &[Frame], exponent: f64, sigma: f64) -> Result<Frame> {
    check_blocks(blocks)?;
    if !(exponent >= 0.0) {
        return Err(Error::Config(format!("exponent must be >= 0, got {exponent}")));
    }
    let (h, w) = blocks[0].dims();
    let mut fuser = BlockFuser::new(h, w, exponent, sigma);
    fuser.reset(blocks[0].num_channels());
    for b in blocks {
        fuser.add_block(b.channels(), 0, 0);
    }
    let planes = fuser
        .finish()
        .into_iter()
        .map(|d| Plane::from_vec(h, w, d))
        .collect::<Result<Vec<_>>>()?;
    Frame::new(planes)
}

/// Normalized per-frequency weights of every block (one plane per block).
pub fn fusion_weights(blocks: &[Frame], exponent: f64, sigma: f64) -> Result<Vec<Plane>> {
    check_blocks(blocks)?;
    let mags: Vec<Plane> = blocks
        .iter()
        .map(|b| smooth_magnitude(&block_magnitude(&block_spectrum(b)), sigma))
        .collect();
    let (h, w) = blocks[0].dims();
    let n = h * w;
    let mut weights = vec![Plane::zeros(h, w); blocks.len()];
    for k in 0..n {
        let mx = mags.iter().map(|m| m.as_slice()[k]).fold(0.0, f64::max);
        let raw: Vec<f64> = mags
            .iter()
            .map(|m| {
                if mx > 0.0 {
                    (m.as_slice()[k] / mx).powf(exponent)
                } else {
                    1.0
                }
            })
            .collect();
        let total: f64 = raw.iter().sum();
        for (wp, r) in weights.iter_mut().zip(raw) {
            wp.as_mut_slice()[k] = r / total;
        }
    }
    Ok(weights)
}

/// Block-wise fusion of a registered stack with overlap averaging.
pub fn fuse_stack(stack: &RegisteredStack, cfg: &FbaConfig) -> Result<Frame> {
    let first = stack
        .frames
        .first()
        .ok_or_else(|| Error::Input("cannot fuse an empty stack".into()))?;
    for f in &stack.frames[1..] {
        first.check_same_shape(f)?;
    }
    cfg.validate()?;
    let (h, w) = first.dims();
    let nc = first.num_channels();
    let b = cfg.block_size;
    let grid = make_block_grid(h, w, b, cfg.stride)?;
    let half = grid.pad_margin();
    let padded: Vec<Frame> = stack
        .frames
        .iter()
        .map(|f| mirror_pad(f, half))
        .collect::<Result<_>>()?;
    let exponent = cfg.exponent;
    let sigma = cfg.spectrum_sigma();

    let mut sum = vec![vec![0.0; h * w]; nc];
    let mut count = vec![0.0; h * w];
    for &top in grid.row_centers() {
        let fused: Vec<Vec<Vec<f64>>> = grid
            .col_centers()
            .par_iter()
            .map_init(
                || BlockFuser::new(b, b, exponent, sigma),
                |fuser, &left| {
                    fuser.reset(nc);
                    for f in &padded {
                        fuser.add_block(f.channels(), top, left);
                    }
                    fuser.finish()
                },
            )
            .collect();
        // Sequential, ordered accumulation keeps the output independent of
        // the thread count.
        for (&left, block) in grid.col_centers().iter().zip(&fused) {
            let y0 = top.saturating_sub(half);
            let y1 = (top + half).min(h);
            let x0 = left.saturating_sub(half);
            let x1 = (left + half).min(w);
            for y in y0..y1 {
                let by = y + half - top;
                for x in x0..x1 {
                    let bx = x + half - left;
                    count[y * w + x] += 1.0;
                    for (s, blk) in sum.iter_mut().zip(block) {
                        s[y * w + x] += blk[by * b + bx];
                    }
                }
            }
        }
    }
    let planes = sum
        .into_iter()
        .map(|mut s| {
            for (v, c) in s.iter_mut().zip(&count) {
                *v /= c;
            }
            Plane::from_vec(h, w, s)
        })
        .collect::<Result<Vec<_>>>()?;
    Frame::new(planes)
}
