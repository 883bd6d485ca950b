#![allow(dead_code)]

use burstfuse::frame::{gaussian_blur, Frame, Plane};
use num_complex_lite::C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Rescales `p` linearly onto `[lo, hi]`.
pub fn stretch(p: &Plane, lo: f64, hi: f64) -> Plane {
    let min = p.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let max = p.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (max - min).max(1e-12);
    p.map(|v| lo + (hi - lo) * (v - min) / span)
}

/// Smoothed white noise, zero mean-ish, unit-ish range.
pub fn smooth_noise(h: usize, w: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Plane {
    let white = Plane::from_fn(h, w, |_, _| rng.random::<f64>() - 0.5);
    stretch(&gaussian_blur(&white, sigma), -1.0, 1.0)
}

/// A photo-like test image: multi-scale texture plus hard-edged shapes,
/// values inside `[0.1, 0.9]`.
pub fn natural_image(h: usize, w: usize, seed: u64) -> Plane {
    let mut r = rng(seed);
    let fine = smooth_noise(h, w, 1.2, &mut r);
    let coarse = smooth_noise(h, w, 8.0, &mut r);
    let mut img = Plane::from_fn(h, w, |y, x| 0.25 * fine.get(y, x) + 0.5 * coarse.get(y, x));
    for _ in 0..12 {
        let cy = r.random_range(0..h) as f64;
        let cx = r.random_range(0..w) as f64;
        let size = r.random_range(3.0..(h.min(w) as f64 / 5.0).max(4.0));
        let level = r.random_range(-0.8..0.8);
        let disc = r.random_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let inside = if disc {
                    dy * dy + dx * dx < size * size
                } else {
                    dy.abs() < size && dx.abs() < size * 0.6
                };
                if inside {
                    img.set(y, x, level + 0.2 * fine.get(y, x));
                }
            }
        }
    }
    stretch(&img, 0.1, 0.9)
}

/// Two views of one textured scene, the second translated by `(dy, dx)`
/// whole pixels: `b(y, x) = a(y - dy, x - dx)`.
pub fn translated_pair(h: usize, w: usize, dy: usize, dx: usize, seed: u64) -> (Plane, Plane) {
    let big = natural_image(h + dy, w + dx, seed);
    let a = Plane::from_fn(h, w, |y, x| big.get(y + dy, x + dx));
    let b = Plane::from_fn(h, w, |y, x| big.get(y, x));
    (a, b)
}

pub fn gray(p: Plane) -> Frame {
    Frame::from_plane(p).unwrap()
}

pub fn add_noise(f: &Frame, std: f64, rng: &mut ChaCha8Rng) -> Frame {
    use rand_distr::{Distribution, Normal};
    let n = Normal::new(0.0, std).unwrap();
    let channels = f
        .channels()
        .iter()
        .map(|p| Plane::from_fn(p.height(), p.width(), |y, x| p.get(y, x) + n.sample(rng)))
        .collect();
    Frame::new(channels).unwrap()
}

/// Reference implementation of per-frequency fusion by explicit DFT sums,
/// exact `|.|^p` ratio weights and a circular Gaussian on the magnitude.
pub fn naive_fusion(stack: &[Plane], p: f64, sigma: f64) -> Plane {
    let frames: Vec<Vec<Plane>> = stack.iter().map(|f| vec![f.clone()]).collect();
    naive_fusion_channels(&frames, p, sigma).remove(0)
}

/// Multi-channel version: `stack[frame][channel]`; the weight magnitude is
/// the channel mean of the coefficient moduli.
pub fn naive_fusion_channels(stack: &[Vec<Plane>], p: f64, sigma: f64) -> Vec<Plane> {
    let (h, w) = stack[0][0].dims();
    let nc = stack[0].len();
    let spectra: Vec<Vec<Vec<C>>> = stack
        .iter()
        .map(|f| f.iter().map(naive_dft).collect())
        .collect();
    let mags: Vec<Vec<f64>> = spectra
        .iter()
        .map(|chans| {
            let m: Vec<f64> = (0..h * w)
                .map(|k| chans.iter().map(|s| s[k].abs()).sum::<f64>() / nc as f64)
                .collect();
            circular_gaussian(&m, h, w, sigma)
        })
        .collect();
    (0..nc)
        .map(|c| {
            let mut fused = vec![C::ZERO; h * w];
            for k in 0..h * w {
                let powers: Vec<f64> = mags.iter().map(|m| m[k].powf(p)).collect();
                let total: f64 = powers.iter().sum();
                for (i, s) in spectra.iter().enumerate() {
                    let weight = if total > 0.0 {
                        powers[i] / total
                    } else {
                        1.0 / stack.len() as f64
                    };
                    fused[k] = fused[k] + s[c][k].scale(weight);
                }
            }
            naive_idft(&fused, h, w)
        })
        .collect()
}

fn naive_dft(p: &Plane) -> Vec<C> {
    let (h, w) = p.dims();
    let mut out = vec![C::ZERO; h * w];
    for u in 0..h {
        for v in 0..w {
            let mut acc = C::ZERO;
            for y in 0..h {
                for x in 0..w {
                    let phase = -2.0 * std::f64::consts::PI
                        * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                    acc = acc + C::polar(p.get(y, x), phase);
                }
            }
            out[u * w + v] = acc;
        }
    }
    out
}

fn naive_idft(s: &[C], h: usize, w: usize) -> Plane {
    Plane::from_fn(h, w, |y, x| {
        let mut acc = C::ZERO;
        for u in 0..h {
            for v in 0..w {
                let phase = 2.0 * std::f64::consts::PI
                    * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                acc = acc + s[u * w + v] * C::polar(1.0, phase);
            }
        }
        acc.re / (h * w) as f64
    })
}

/// 2-D circular convolution with the sampled, normalized Gaussian of
/// radius `ceil(3 sigma)`; indices wrap modulo the plane size.
fn circular_gaussian(m: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return m.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let g: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = g.iter().sum::<f64>().powi(2);
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let yy = (y - dy).rem_euclid(h as isize) as usize;
                    let xx = (x - dx).rem_euclid(w as isize) as usize;
                    acc += g[(dy + r) as usize] * g[(dx + r) as usize] * m[yy * w + xx];
                }
            }
            out[y as usize * w + x as usize] = acc / norm;
        }
    }
    out
}

/// Minimal complex arithmetic so the oracle shares no code with the FFT path.
pub mod num_complex_lite {
    use std::ops::{Add, Mul};

    #[derive(Clone, Copy, Debug)]
    pub struct C {
        pub re: f64,
        pub im: f64,
    }

    impl C {
        pub const ZERO: C = C { re: 0.0, im: 0.0 };

        pub fn polar(r: f64, theta: f64) -> C {
            C {
                re: r * theta.cos(),
                im: r * theta.sin(),
            }
        }

        pub fn abs(self) -> f64 {
            self.re.hypot(self.im)
        }

        pub fn scale(self, k: f64) -> C {
            C {
                re: self.re * k,
                im: self.im * k,
            }
        }
    }

    impl Add for C {
        type Output = C;
        fn add(self, o: C) -> C {
            C {
                re: self.re + o.re,
                im: self.im + o.im,
            }
        }
    }

    impl Mul for C {
        type Output = C;
        fn mul(self, o: C) -> C {
            C {
                re: self.re * o.re - self.im * o.im,
                im: self.re * o.im + self.im * o.re,
            }
        }
    }
}
