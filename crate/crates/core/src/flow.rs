//! Dense optical flow: coarse-to-fine TV-L1 with primal-dual inner iterations.
//!
//! The solver minimizes
//! `sum |grad u1| + |grad u2| + lambda * |I1(x + u) - I0(x)|`
//! with the usual quadratic relaxation coupling `u` to an auxiliary field `v`
//! (tightness `theta`). `v` has a closed-form thresholding update, `u` is the
//! ROF denoising of `v` solved by Chambolle's projection on the dual field `p`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::FbaConfig;
use crate::error::{Error, Result};
use crate::frame::{gaussian_blur, Frame, Plane};
use crate::warp::{sample_bicubic, warp_plane};

/// Per-pixel displacement; `(dx, dy)` at `(y, x)` points to `(y + dy, x + dx)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    dx: Plane,
    dy: Plane,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0, 0.0)
    }

    pub fn constant(height: usize, width: usize, dx: f64, dy: f64) -> Self {
        FlowField {
            dx: Plane::filled(height, width, dx),
            dy: Plane::filled(height, width, dy),
        }
    }

    pub fn from_planes(dx: Plane, dy: Plane) -> Result<Self> {
        if dx.dims() != dy.dims() {
            return Err(Error::dims(dx.dims(), dy.dims()));
        }
        if dx
            .as_slice()
            .iter()
            .chain(dy.as_slice())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Input("flow contains non-finite values".into()));
        }
        Ok(FlowField { dx, dy })
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.dx.dims()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.dx.height()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.dx.width()
    }

    /// `(dx, dy)` at pixel `(y, x)`.
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> (f64, f64) {
        (self.dx.get(y, x), self.dy.get(y, x))
    }

    pub fn dx(&self) -> &Plane {
        &self.dx
    }

    pub fn dy(&self) -> &Plane {
        &self.dy
    }

    pub fn into_planes(self) -> (Plane, Plane) {
        (self.dx, self.dy)
    }

    /// Mean distance to a constant reference displacement.
    pub fn mean_endpoint_error(&self, dx: f64, dy: f64) -> f64 {
        let n = self.dx.as_slice().len() as f64;
        self.dx
            .as_slice()
            .iter()
            .zip(self.dy.as_slice())
            .map(|(a, b)| (a - dx).hypot(b - dy))
            .sum::<f64>()
            / n
    }

    pub fn max_magnitude(&self) -> f64 {
        self.dx
            .as_slice()
            .iter()
            .zip(self.dy.as_slice())
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    /// Weight of the L1 data term (lambda).
    pub data_weight: f64,
    /// Coupling between the flow and its auxiliary copy (theta).
    pub tightness: f64,
    /// Dual step size; stable for values up to 1/4.
    pub time_step: f64,
    pub warps: usize,
    pub pyramid_factor: f64,
    /// Coarsest pyramid level keeps its shorter side at least this long.
    pub min_level_size: usize,
    pub max_inner_iters: usize,
    /// Inner loop stops once the RMS flow update drops below this.
    pub stop_tol: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            data_weight: 0.15,
            tightness: 0.3,
            time_step: 0.25,
            warps: 5,
            pyramid_factor: 0.5,
            min_level_size: 16,
            max_inner_iters: 300,
            stop_tol: 0.01,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.pyramid_factor > 0.0 && self.pyramid_factor < 1.0) {
            return bad("pyramid_factor must be in (0, 1)");
        }
        if self.warps == 0 || self.max_inner_iters == 0 || self.min_level_size == 0 {
            return bad("warps, max_inner_iters and min_level_size must be >= 1");
        }
        if !(self.time_step > 0.0 && self.time_step <= 0.25) {
            return bad("time_step must be in (0, 0.25]");
        }
        if !(self.data_weight > 0.0 && self.tightness > 0.0 && self.stop_tol >= 0.0) {
            return bad("data_weight and tightness must be > 0, stop_tol >= 0");
        }
        Ok(())
    }
}

/// Energy after each warp of one pyramid level, coarsest level first.
#[derive(Clone, Debug, Default)]
pub struct LevelTrace {
    pub dims: (usize, usize),
    /// Energy of the initial flow followed by the energy after each accepted
    /// warp.
    pub energies: Vec<f64>,
    /// Warps discarded because they raised the energy; the level stops at
    /// the first one.
    pub rejected_warps: usize,
}

const PRESMOOTH_SIGMA: f64 = 0.8;
const GRAD_IS_ZERO: f64 = 1e-10;

/// Flow `f` on `src`'s grid with `src(x) ~ dst(x + f(x))`.
pub fn estimate_flow_tvl1(src: &Plane, dst: &Plane, params: &FlowParams) -> Result<FlowField> {
    estimate_flow_tvl1_traced(src, dst, params).map(|(f, _)| f)
}

pub fn estimate_flow_tvl1_traced(
    src: &Plane,
    dst: &Plane,
    params: &FlowParams,
) -> Result<(FlowField, Vec<LevelTrace>)> {
    params.validate()?;
    if src.dims() != dst.dims() {
        return Err(Error::dims(src.dims(), dst.dims()));
    }
    let (h, w) = src.dims();
    let (i0, i1) = match normalize_pair(src, dst) {
        Some(pair) => pair,
        // Constant pair: no data term anywhere, the zero field is optimal.
        None => return Ok((FlowField::zeros(h, w), Vec::new())),
    };
    let i0 = gaussian_blur(&i0, PRESMOOTH_SIGMA);
    let i1 = gaussian_blur(&i1, PRESMOOTH_SIGMA);

    let mut pyramid = vec![(i0, i1)];
    loop {
        let (a, b) = pyramid.last().unwrap();
        let (lh, lw) = a.dims();
        let nh = (lh as f64 * params.pyramid_factor).round() as usize;
        let nw = (lw as f64 * params.pyramid_factor).round() as usize;
        if nh.min(nw) < params.min_level_size {
            break;
        }
        let next = (
            zoom_out(a, nh, nw, params.pyramid_factor),
            zoom_out(b, nh, nw, params.pyramid_factor),
        );
        pyramid.push(next);
    }

    let mut traces = Vec::with_capacity(pyramid.len());
    let mut flow: Option<FlowField> = None;
    for (a, b) in pyramid.iter().rev() {
        let (lh, lw) = a.dims();
        let init = match flow.take() {
            None => FlowField::zeros(lh, lw),
            Some(f) => upsample_flow(&f, lh, lw)?,
        };
        let (f, trace) = solve_level(a, b, init, params);
        traces.push(trace);
        flow = Some(f);
    }
    Ok((flow.unwrap(), traces))
}

/// Jointly rescales a pair to `[0, 255]`, the range the default data weight
/// is tuned for. Returns `None` for a constant pair.
fn normalize_pair(a: &Plane, b: &Plane) -> Option<(Plane, Plane)> {
    let (lo, hi) = a
        .as_slice()
        .iter()
        .chain(b.as_slice())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return None;
    }
    let s = 255.0 / range;
    Some((a.map(|v| (v - lo) * s), b.map(|v| (v - lo) * s)))
}

fn zoom_out(plane: &Plane, nh: usize, nw: usize, factor: f64) -> Plane {
    let sigma = 0.6 * (1.0 / (factor * factor) - 1.0).sqrt();
    let smooth = gaussian_blur(plane, sigma);
    let (h, w) = plane.dims();
    let ry = h as f64 / nh as f64;
    let rx = w as f64 / nw as f64;
    Plane::from_fn(nh, nw, |y, x| {
        sample_bicubic(
            &smooth,
            (y as f64 + 0.5) * ry - 0.5,
            (x as f64 + 0.5) * rx - 0.5,
        )
    })
}

fn centered_gradient(p: &Plane) -> (Plane, Plane) {
    let (h, w) = p.dims();
    let gx = Plane::from_fn(h, w, |y, x| {
        let l = p.get(y, x.saturating_sub(1));
        let r = p.get(y, (x + 1).min(w - 1));
        let span = ((x + 1).min(w - 1) - x.saturating_sub(1)) as f64;
        if span > 0.0 {
            (r - l) / span
        } else {
            0.0
        }
    });
    let gy = Plane::from_fn(h, w, |y, x| {
        let u = p.get(y.saturating_sub(1), x);
        let d = p.get((y + 1).min(h - 1), x);
        let span = ((y + 1).min(h - 1) - y.saturating_sub(1)) as f64;
        if span > 0.0 {
            (d - u) / span
        } else {
            0.0
        }
    });
    (gx, gy)
}

/// Forward differences with zero derivative past the last sample.
fn forward_gradient(u: &[f64], w: usize, gx: &mut [f64], gy: &mut [f64]) {
    let h = u.len() / w;
    gx.par_chunks_mut(w)
        .zip(gy.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (rx, ry))| {
            let row = &u[y * w..(y + 1) * w];
            for x in 0..w {
                rx[x] = if x + 1 < w { row[x + 1] - row[x] } else { 0.0 };
                ry[x] = if y + 1 < h { u[(y + 1) * w + x] - row[x] } else { 0.0 };
            }
        });
}

/// Negative adjoint of [`forward_gradient`].
fn divergence(px: &[f64], py: &[f64], w: usize, out: &mut [f64]) {
    let h = px.len() / w;
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let i = y * w + x;
            let mut d = 0.0;
            if x + 1 < w {
                d += px[i];
            }
            if x > 0 {
                d -= px[i - 1];
            }
            if y + 1 < h {
                d += py[i];
            }
            if y > 0 {
                d -= py[i - w];
            }
            row[x] = d;
        }
    });
}

fn median3x3(p: &Plane) -> Plane {
    let (h, w) = p.dims();
    let mut out = Plane::zeros(h, w);
    out.as_mut_slice()
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            let mut buf = [0.0f64; 9];
            for (x, o) in row.iter_mut().enumerate() {
                let mut n = 0;
                for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        buf[n] = p.get(yy, xx);
                        n += 1;
                    }
                }
                let s = &mut buf[..n];
                s.sort_unstable_by(f64::total_cmp);
                *o = if n % 2 == 1 {
                    s[n / 2]
                } else {
                    0.5 * (s[n / 2 - 1] + s[n / 2])
                };
            }
        });
    out
}

/// Discrete TV-L1 energy of `flow` for the pair `(i0, i1)`.
pub fn tvl1_energy(i0: &Plane, i1: &Plane, flow: &FlowField, data_weight: f64) -> f64 {
    let (h, w) = i0.dims();
    let warped = warp_plane(i1, flow);
    let n = h * w;
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut tv = 0.0;
    for comp in [flow.dx(), flow.dy()] {
        forward_gradient(comp.as_slice(), w, &mut gx, &mut gy);
        tv += gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).sum::<f64>();
    }
    let data: f64 = warped
        .as_slice()
        .iter()
        .zip(i0.as_slice())
        .map(|(a, b)| (a - b).abs())
        .sum();
    tv + data_weight * data
}

fn solve_level(i0: &Plane, i1: &Plane, init: FlowField, params: &FlowParams) -> (FlowField, LevelTrace) {
    let (h, w) = i0.dims();
    let n = h * w;
    let lambda_theta = params.data_weight * params.tightness;
    let theta = params.tightness;
    let taut = params.time_step / params.tightness;

    let (i1x, i1y) = centered_gradient(i1);
    let (mut u1, mut u2) = init.into_planes();
    let mut trace = LevelTrace {
        dims: (h, w),
        energies: Vec::with_capacity(params.warps + 1),
        rejected_warps: 0,
    };
    trace.energies.push(tvl1_energy(
        i0,
        i1,
        &FlowField {
            dx: u1.clone(),
            dy: u2.clone(),
        },
        params.data_weight,
    ));

    let mut p11 = vec![0.0; n];
    let mut p12 = vec![0.0; n];
    let mut p21 = vec![0.0; n];
    let mut p22 = vec![0.0; n];
    let mut div1 = vec![0.0; n];
    let mut div2 = vec![0.0; n];
    let mut u1x = vec![0.0; n];
    let mut u1y = vec![0.0; n];
    let mut u2x = vec![0.0; n];
    let mut u2y = vec![0.0; n];
    let mut v1 = vec![0.0; n];
    let mut v2 = vec![0.0; n];

    for _ in 0..params.warps {
        let current = FlowField {
            dx: u1.clone(),
            dy: u2.clone(),
        };
        let i1w = warp_plane(i1, &current);
        let i1wx = warp_plane(&i1x, &current);
        let i1wy = warp_plane(&i1y, &current);
        let (gx, gy, iw) = (i1wx.as_slice(), i1wy.as_slice(), i1w.as_slice());
        let grad: Vec<f64> = gx.iter().zip(gy).map(|(a, b)| a * a + b * b).collect();
        let rho_c: Vec<f64> = (0..n)
            .map(|i| {
                iw[i] - gx[i] * u1.as_slice()[i] - gy[i] * u2.as_slice()[i] - i0.as_slice()[i]
            })
            .collect();

        let stop = params.stop_tol * params.stop_tol;
        let mut iter = 0;
        let mut change = f64::INFINITY;
        while change > stop && iter < params.max_inner_iters {
            iter += 1;
            {
                let (u1s, u2s) = (u1.as_slice(), u2.as_slice());
                v1.par_iter_mut()
                    .zip(v2.par_iter_mut())
                    .enumerate()
                    .for_each(|(i, (a, b))| {
                        let rho = rho_c[i] + gx[i] * u1s[i] + gy[i] * u2s[i];
                        let g = grad[i];
                        // A flat pixel carries no data, even if roundoff
                        // left a residual.
                        let (d1, d2) = if g < GRAD_IS_ZERO {
                            (0.0, 0.0)
                        } else if rho < -lambda_theta * g {
                            (lambda_theta * gx[i], lambda_theta * gy[i])
                        } else if rho > lambda_theta * g {
                            (-lambda_theta * gx[i], -lambda_theta * gy[i])
                        } else {
                            let fi = -rho / g;
                            (fi * gx[i], fi * gy[i])
                        };
                        *a = u1s[i] + d1;
                        *b = u2s[i] + d2;
                    });
            }
            divergence(&p11, &p12, w, &mut div1);
            divergence(&p21, &p22, w, &mut div2);
            // Row partials are summed in order so the stopping test, and with
            // it the result, does not depend on the thread schedule.
            let partials: Vec<f64> = u1
                .as_mut_slice()
                .par_chunks_mut(w)
                .zip(u2.as_mut_slice().par_chunks_mut(w))
                .enumerate()
                .map(|(y, (r1, r2))| {
                    let mut acc = 0.0;
                    for x in 0..w {
                        let i = y * w + x;
                        let na = v1[i] + theta * div1[i];
                        let nb = v2[i] + theta * div2[i];
                        acc += (na - r1[x]) * (na - r1[x]) + (nb - r2[x]) * (nb - r2[x]);
                        r1[x] = na;
                        r2[x] = nb;
                    }
                    acc
                })
                .collect();
            change = partials.iter().sum::<f64>() / n as f64;
            forward_gradient(u1.as_slice(), w, &mut u1x, &mut u1y);
            forward_gradient(u2.as_slice(), w, &mut u2x, &mut u2y);
            p11.par_iter_mut()
                .zip(p12.par_iter_mut())
                .zip(p21.par_iter_mut().zip(p22.par_iter_mut()))
                .enumerate()
                .for_each(|(i, ((a11, a12), (a21, a22)))| {
                    let ng1 = 1.0 + taut * u1x[i].hypot(u1y[i]);
                    let ng2 = 1.0 + taut * u2x[i].hypot(u2y[i]);
                    *a11 = (*a11 + taut * u1x[i]) / ng1;
                    *a12 = (*a12 + taut * u1y[i]) / ng1;
                    *a21 = (*a21 + taut * u2x[i]) / ng2;
                    *a22 = (*a22 + taut * u2y[i]) / ng2;
                });
        }
        u1 = median3x3(&u1);
        u2 = median3x3(&u2);
        // Each warp solves a linearized problem and the median filter is not
        // a descent step, so the true energy can rise. Keep the better flow.
        let energy = tvl1_energy(
            i0,
            i1,
            &FlowField {
                dx: u1.clone(),
                dy: u2.clone(),
            },
            params.data_weight,
        );
        let last = *trace.energies.last().unwrap();
        if energy > last {
            trace.rejected_warps += 1;
            return (current, trace);
        }
        trace.energies.push(energy);
    }
    (FlowField { dx: u1, dy: u2 }, trace)
}

/// Linear interpolation positions with edge extrapolation, so affine fields
/// are reproduced exactly up to the borders.
fn linear_taps(new_len: usize, old_len: usize) -> Vec<(usize, usize, f64)> {
    let ratio = old_len as f64 / new_len as f64;
    (0..new_len)
        .map(|i| {
            if old_len == 1 {
                return (0, 0, 0.0);
            }
            let pos = (i as f64 + 0.5) * ratio - 0.5;
            let i0 = (pos.floor().max(0.0) as usize).min(old_len - 2);
            (i0, i0 + 1, pos - i0 as f64)
        })
        .collect()
}

fn resample_linear(p: &Plane, nh: usize, nw: usize, scale: f64) -> Plane {
    let ys = linear_taps(nh, p.height());
    let xs = linear_taps(nw, p.width());
    Plane::from_fn(nh, nw, |y, x| {
        let (ya, yb, ty) = ys[y];
        let (xa, xb, tx) = xs[x];
        let top = p.get(ya, xa) * (1.0 - tx) + p.get(ya, xb) * tx;
        let bot = p.get(yb, xa) * (1.0 - tx) + p.get(yb, xb) * tx;
        scale * (top * (1.0 - ty) + bot * ty)
    })
}

/// Bilinear upsampling of a flow field; displacements are scaled by the
/// per-axis size ratio.
pub fn upsample_flow(f: &FlowField, new_height: usize, new_width: usize) -> Result<FlowField> {
    let (h, w) = f.dims();
    if new_height < h || new_width < w {
        return Err(Error::Config(format!(
            "upsample_flow cannot shrink {h}x{w} to {new_height}x{new_width}"
        )));
    }
    if (new_height, new_width) == (h, w) {
        return Ok(f.clone());
    }
    let sy = new_height as f64 / h as f64;
    let sx = new_width as f64 / w as f64;
    Ok(FlowField {
        dx: resample_linear(&f.dx, new_height, new_width, sx),
        dy: resample_linear(&f.dy, new_height, new_width, sy),
    })
}

/// 1D area-resampling taps: `(first input index, weights)` per output sample.
fn area_taps(old_len: usize, new_len: usize) -> Vec<(usize, Vec<f64>)> {
    let r = old_len as f64 / new_len as f64;
    (0..new_len)
        .map(|i| {
            let lo = i as f64 * r;
            let hi = ((i + 1) as f64 * r).min(old_len as f64);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(old_len);
            let weights: Vec<f64> = (first..last)
                .map(|j| {
                    let a = lo.max(j as f64);
                    let b = hi.min(j as f64 + 1.0);
                    (b - a).max(0.0) / (hi - lo)
                })
                .collect();
            (first, weights)
        })
        .collect()
}

/// Box-filter (pixel area) resampling to an arbitrary smaller size.
pub fn area_downscale(p: &Plane, new_height: usize, new_width: usize) -> Plane {
    let ys = area_taps(p.height(), new_height);
    let xs = area_taps(p.width(), new_width);
    let tmp: Vec<Vec<f64>> = (0..p.height())
        .map(|y| {
            let row = p.row(y);
            xs.iter()
                .map(|(first, ws)| ws.iter().enumerate().map(|(k, wt)| wt * row[first + k]).sum())
                .collect()
        })
        .collect();
    Plane::from_fn(new_height, new_width, |y, x| {
        let (first, ws) = &ys[y];
        ws.iter()
            .enumerate()
            .map(|(k, wt)| wt * tmp[first + k][x])
            .sum()
    })
}

fn scaled_dims(h: usize, w: usize, scale: f64) -> (usize, usize) {
    (
        ((h as f64 * scale).round() as usize).max(1),
        ((w as f64 * scale).round() as usize).max(1),
    )
}

/// Forward (reference to other, on the reference grid) and backward (other
/// to reference, on the other grid) flows, estimated at `cfg.flow_scale` of
/// the input resolution and upsampled back.
pub fn estimate_flow_pair(
    reference: &Frame,
    other: &Frame,
    cfg: &FbaConfig,
    params: &FlowParams,
) -> Result<(FlowField, FlowField)> {
    if reference.dims() != other.dims() {
        return Err(Error::dims(reference.dims(), other.dims()));
    }
    if !(cfg.flow_scale > 0.0 && cfg.flow_scale <= 1.0) {
        return Err(Error::Config(format!(
            "flow_scale must be in (0, 1], got {}",
            cfg.flow_scale
        )));
    }
    let (h, w) = reference.dims();
    let (sh, sw) = scaled_dims(h, w, cfg.flow_scale);
    let prepare = |f: &Frame| {
        let g = f.to_gray();
        if (sh, sw) == (h, w) {
            g
        } else {
            area_downscale(&g, sh, sw)
        }
    };
    let a = prepare(reference);
    let b = prepare(other);
    let (fwd, bwd) = rayon::join(
        || estimate_flow_tvl1(&a, &b, params),
        || estimate_flow_tvl1(&b, &a, params),
    );
    Ok((upsample_flow(&fwd?, h, w)?, upsample_flow(&bwd?, h, w)?))
}
