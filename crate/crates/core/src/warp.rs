//! Backward warping through flow fields and forward/backward flow composition.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::frame::{reflect_index, Frame, Plane};
use crate::register::ConsistencyMap;

/// Round-trip error assigned to pixels whose forward target leaves the frame.
pub const OUT_OF_FRAME: f64 = 1e9;

/// Binary map of pixels whose sample point fell outside the source frame.
#[derive(Clone, Debug, PartialEq)]
pub struct OobMask {
    height: usize,
    width: usize,
    values: Vec<bool>,
}

impl OobMask {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.values[y * self.width + x]
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }
}

/// Catmull-Rom taps for fractional offset `t` in `[0, 1)`.
#[inline]
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

#[inline]
fn taps(pos: f64, n: usize) -> ([usize; 4], [f64; 4]) {
    let base = pos.floor();
    let weights = catmull_rom(pos - base);
    let b = base as isize;
    let idx = if b >= 1 && b + 2 < n as isize {
        let b = b as usize;
        [b - 1, b, b + 1, b + 2]
    } else {
        [
            reflect_index(b - 1, n),
            reflect_index(b, n),
            reflect_index(b + 1, n),
            reflect_index(b + 2, n),
        ]
    };
    (idx, weights)
}

/// Catmull-Rom sample at fractional `(y, x)`; support outside the plane is
/// mirror reflected.
#[inline]
pub fn sample_bicubic(plane: &Plane, y: f64, x: f64) -> f64 {
    let (h, w) = plane.dims();
    let (ys, wy) = taps(y, h);
    let (xs, wx) = taps(x, w);
    let data = plane.as_slice();
    let mut acc = 0.0;
    for (&yy, &ky) in ys.iter().zip(&wy) {
        let row = &data[yy * w..(yy + 1) * w];
        let r = wx[0] * row[xs[0]] + wx[1] * row[xs[1]] + wx[2] * row[xs[2]] + wx[3] * row[xs[3]];
        acc += ky * r;
    }
    acc
}

/// Bilinear sample with coordinates clamped to the plane.
#[inline]
pub fn sample_bilinear(plane: &Plane, y: f64, x: f64) -> f64 {
    let (h, w) = plane.dims();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let ty = y - y0 as f64;
    let tx = x - x0 as f64;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let top = plane.get(y0, x0) * (1.0 - tx) + plane.get(y0, x1) * tx;
    let bottom = plane.get(y1, x0) * (1.0 - tx) + plane.get(y1, x1) * tx;
    top * (1.0 - ty) + bottom * ty
}

#[inline]
pub(crate) fn inside(h: usize, w: usize, y: f64, x: f64) -> bool {
    y >= 0.0 && x >= 0.0 && y <= (h - 1) as f64 && x <= (w - 1) as f64
}

/// `out(y, x) = src(y + dy, x + dx)` for one plane.
pub(crate) fn warp_plane(src: &Plane, flow: &FlowField) -> Plane {
    let (h, w) = flow.dims();
    let mut out = Plane::zeros(h, w);
    out.as_mut_slice()
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, o) in row.iter_mut().enumerate() {
                let (dx, dy) = flow.get(y, x);
                *o = sample_bicubic(src, y as f64 + dy, x as f64 + dx);
            }
        });
    out
}

/// Backward-warps every channel of `src` onto the grid of `flow`.
pub fn warp_bicubic(src: &Frame, flow: &FlowField) -> Result<(Frame, OobMask)> {
    if src.dims() != flow.dims() {
        return Err(Error::dims(src.dims(), flow.dims()));
    }
    let (h, w) = flow.dims();
    let warped = src.map_channels(|p| warp_plane(p, flow));
    let mut values = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = flow.get(y, x);
            values.push(!inside(h, w, y as f64 + dy, x as f64 + dx));
        }
    }
    Ok((
        warped,
        OobMask {
            height: h,
            width: w,
            values,
        },
    ))
}

/// Forward/backward disagreement `|f(x) + g(x + f(x))|`.
///
/// `fwd` lives on the reference grid and `bwd` on the other frame's grid;
/// `bwd` is sampled bilinearly. Pixels mapped outside the frame get
/// [`OUT_OF_FRAME`].
pub fn roundtrip_map(fwd: &FlowField, bwd: &FlowField) -> Result<ConsistencyMap> {
    if fwd.dims() != bwd.dims() {
        return Err(Error::dims(fwd.dims(), bwd.dims()));
    }
    let (h, w) = fwd.dims();
    let mut out = Plane::zeros(h, w);
    out.as_mut_slice()
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, o) in row.iter_mut().enumerate() {
                let (fx, fy) = fwd.get(y, x);
                let ty = y as f64 + fy;
                let tx = x as f64 + fx;
                *o = if inside(h, w, ty, tx) {
                    let gx = sample_bilinear(bwd.dx(), ty, tx);
                    let gy = sample_bilinear(bwd.dy(), ty, tx);
                    (fx + gx).hypot(fy + gy)
                } else {
                    OUT_OF_FRAME
                };
            }
        });
    Ok(ConsistencyMap::from_plane(out))
}
