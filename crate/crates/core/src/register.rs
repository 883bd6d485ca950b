//! Consistent registration of a temporal window onto its reference frame.
//!
//! Every neighbour is warped onto the reference with the forward flow, and
//! only pixels whose forward/backward round trip lands within tolerance of
//! the start are taken from it; the rest are copied from the reference. The
//! binary decision is softened by disc morphology and a Gaussian so the
//! blend has no seams.

use rayon::prelude::*;

use crate::config::{FbaConfig, MaskMode};
use crate::error::{Error, Result};
use crate::flow::{estimate_flow_pair, FlowParams};
use crate::frame::{gaussian_blur, Frame, Plane};
use crate::warp::{roundtrip_map, warp_bicubic, OobMask};

/// Forward/backward round-trip error in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyMap(Plane);

impl ConsistencyMap {
    pub fn from_plane(plane: Plane) -> Self {
        ConsistencyMap(plane)
    }

    pub fn plane(&self) -> &Plane {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.0.get(y, x)
    }

    pub fn values(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// Per-pixel trust in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMask(Plane);

impl SoftMask {
    pub fn ones(height: usize, width: usize) -> Self {
        SoftMask(Plane::filled(height, width, 1.0))
    }

    pub fn from_plane(plane: Plane) -> Result<Self> {
        if plane.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input("mask values must lie in [0, 1]".into()));
        }
        Ok(SoftMask(plane))
    }

    pub fn plane(&self) -> &Plane {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.0.get(y, x)
    }

    pub fn values(&self) -> &[f64] {
        self.0.as_slice()
    }

    /// Marks out-of-frame samples as inconsistent.
    pub fn exclude(&mut self, oob: &OobMask) {
        for (m, &out) in self.0.as_mut_slice().iter_mut().zip(oob.values()) {
            if out {
                *m = 0.0;
            }
        }
    }
}

/// Neighbours consistently registered onto `frames[ref_index]`.
#[derive(Clone, Debug)]
pub struct RegisteredStack {
    pub frames: Vec<Frame>,
    pub masks: Vec<SoftMask>,
    pub ref_index: usize,
}

impl RegisteredStack {
    /// Treats already aligned frames as fully consistent.
    pub fn aligned(frames: Vec<Frame>, ref_index: usize) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Input("empty stack".into()))?;
        if ref_index >= frames.len() {
            return Err(Error::Input(format!(
                "reference index {ref_index} outside stack of {}",
                frames.len()
            )));
        }
        for f in &frames[1..] {
            first.check_same_shape(f)?;
        }
        let (h, w) = first.dims();
        let masks = vec![SoftMask::ones(h, w); frames.len()];
        Ok(RegisteredStack {
            frames,
            masks,
            ref_index,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn reference(&self) -> &Frame {
        &self.frames[self.ref_index]
    }
}

/// 1 where the round-trip error is within `epsilon` (inclusive), else 0.
pub fn binary_consistency(cmap: &ConsistencyMap, epsilon: f64) -> SoftMask {
    SoftMask(cmap.plane().map(|v| if v <= epsilon { 1.0 } else { 0.0 }))
}

/// Grows the region selected by `mode` (zeros for conservative, ones for
/// literal) by a disc of radius `r`. The input is read as binary with 0.5 as
/// threshold; the output is binary.
pub fn grow_disc(mask: &SoftMask, r: usize, mode: MaskMode) -> SoftMask {
    let (h, w) = mask.dims();
    let grow_ones = mode == MaskMode::Literal;
    let target = |v: f64| (v >= 0.5) == grow_ones;
    // Prefix counts of target pixels per row.
    let mut prefix = vec![0u32; h * (w + 1)];
    for y in 0..h {
        let base = y * (w + 1);
        for x in 0..w {
            prefix[base + x + 1] = prefix[base + x] + u32::from(target(mask.get(y, x)));
        }
    }
    let half_widths: Vec<usize> = (0..=r)
        .map(|dy| (((r * r - dy * dy) as f64).sqrt() + 1e-9).floor() as usize)
        .collect();
    let (hit, miss) = if grow_ones { (1.0, 0.0) } else { (0.0, 1.0) };
    let mut out = Plane::zeros(h, w);
    out.as_mut_slice()
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, o) in row.iter_mut().enumerate() {
                let lo_y = y.saturating_sub(r);
                let hi_y = (y + r).min(h - 1);
                let found = (lo_y..=hi_y).any(|yy| {
                    let hw = half_widths[yy.abs_diff(y)];
                    let lo = x.saturating_sub(hw);
                    let hi = (x + hw).min(w - 1);
                    let base = yy * (w + 1);
                    prefix[base + hi + 1] > prefix[base + lo]
                });
                *o = if found { hit } else { miss };
            }
        });
    SoftMask(out)
}

/// Disc morphology followed by Gaussian smoothing of std `rho`.
pub fn refine_mask(mask: &SoftMask, r: usize, rho: f64, mode: MaskMode) -> SoftMask {
    let grown = if r == 0 { mask.clone() } else { grow_disc(mask, r, mode) };
    let smooth = gaussian_blur(grown.plane(), rho);
    SoftMask(smooth.map(|v| v.clamp(0.0, 1.0)))
}

/// `mask * warped + (1 - mask) * reference`, per channel.
pub fn blend(warped: &Frame, reference: &Frame, mask: &SoftMask) -> Result<Frame> {
    warped.check_same_shape(reference)?;
    if mask.dims() != reference.dims() {
        return Err(Error::dims(reference.dims(), mask.dims()));
    }
    let m = mask.values();
    let channels = warped
        .channels()
        .iter()
        .zip(reference.channels())
        .map(|(wp, rp)| {
            let data = wp
                .as_slice()
                .iter()
                .zip(rp.as_slice())
                .zip(m)
                .map(|((&a, &b), &t)| t * a + (1.0 - t) * b)
                .collect();
            Plane::from_vec(reference.height(), reference.width(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    Frame::new(channels)
}

/// Registration products of one neighbour, kept for diagnostics.
#[derive(Clone, Debug)]
pub struct NeighbourRegistration {
    pub frame: Frame,
    pub cmap: ConsistencyMap,
    pub mask: SoftMask,
}

/// Registers one frame onto the reference.
pub fn register_neighbour(
    reference: &Frame,
    other: &Frame,
    cfg: &FbaConfig,
    params: &FlowParams,
) -> Result<NeighbourRegistration> {
    reference.check_same_shape(other)?;
    let (fwd, bwd) = estimate_flow_pair(reference, other, cfg, params)?;
    let cmap = roundtrip_map(&fwd, &bwd)?;
    let (warped, oob) = warp_bicubic(other, &fwd)?;
    let mut binary = binary_consistency(&cmap, cfg.consistency_tol);
    binary.exclude(&oob);
    let mask = refine_mask(&binary, cfg.mask_radius, cfg.mask_sigma, cfg.mask_mode);
    let frame = blend(&warped, reference, &mask)?;
    Ok(NeighbourRegistration { frame, cmap, mask })
}

/// Aligns every frame of the window onto `frames[ref_index]`.
pub fn register_window(
    frames: &[Frame],
    ref_index: usize,
    cfg: &FbaConfig,
    params: &FlowParams,
) -> Result<RegisteredStack> {
    let (stack, _) = register_window_detailed(frames, ref_index, cfg, params)?;
    Ok(stack)
}

/// Like [`register_window`], also returning the consistency maps (the
/// reference's entry is all zeros).
pub fn register_window_detailed(
    frames: &[Frame],
    ref_index: usize,
    cfg: &FbaConfig,
    params: &FlowParams,
) -> Result<(RegisteredStack, Vec<ConsistencyMap>)> {
    if frames.is_empty() {
        return Err(Error::Input("cannot register an empty window".into()));
    }
    if ref_index >= frames.len() {
        return Err(Error::Input(format!(
            "reference index {ref_index} outside window of {}",
            frames.len()
        )));
    }
    cfg.validate()?;
    params.validate()?;
    let reference = &frames[ref_index];
    for f in frames {
        reference.check_same_shape(f)?;
    }
    let (h, w) = reference.dims();
    let results = frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            if i == ref_index {
                Ok(NeighbourRegistration {
                    frame: reference.clone(),
                    cmap: ConsistencyMap(Plane::zeros(h, w)),
                    mask: SoftMask::ones(h, w),
                })
            } else {
                register_neighbour(reference, f, cfg, params)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut stack = RegisteredStack {
        frames: Vec::with_capacity(results.len()),
        masks: Vec::with_capacity(results.len()),
        ref_index,
    };
    let mut cmaps = Vec::with_capacity(results.len());
    for r in results {
        stack.frames.push(r.frame);
        stack.masks.push(r.mask);
        cmaps.push(r.cmap);
    }
    Ok((stack, cmaps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_from(h: usize, w: usize, f: impl FnMut(usize, usize) -> f64) -> SoftMask {
        SoftMask::from_plane(Plane::from_fn(h, w, f)).unwrap()
    }

    #[test]
    fn threshold_is_inclusive() {
        let cmap = ConsistencyMap::from_plane(Plane::from_vec(1, 3, vec![0.5, 1.0, 1.5]).unwrap());
        let m = binary_consistency(&cmap, 1.0);
        assert_eq!(m.values(), &[1.0, 1.0, 0.0]);
    }

    #[test]
    fn ones_survive_refinement() {
        let m = SoftMask::ones(20, 20);
        for mode in [MaskMode::Conservative, MaskMode::Literal] {
            let out = refine_mask(&m, 5, 5.0, mode);
            assert!(out.values().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn single_hole_grows_to_disc() {
        let m = mask_from(21, 21, |y, x| if (y, x) == (10, 10) { 0.0 } else { 1.0 });
        let grown = grow_disc(&m, 5, MaskMode::Conservative);
        for y in 0..21 {
            for x in 0..21 {
                let d2 = (y as i64 - 10).pow(2) + (x as i64 - 10).pow(2);
                let expect = if d2 <= 25 { 0.0 } else { 1.0 };
                assert_eq!(grown.get(y, x), expect, "({y},{x})");
            }
        }
        // Literal mode grows the ones instead, closing the hole.
        let lit = grow_disc(&m, 1, MaskMode::Literal);
        assert!(lit.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_radius_zero_sigma_is_identity() {
        let m = mask_from(9, 11, |y, x| ((y * 3 + x) % 2) as f64);
        assert_eq!(refine_mask(&m, 0, 0.0, MaskMode::Conservative), m);
    }

    #[test]
    fn blend_cases() {
        let w = Frame::filled(3, 3, 2, 0.2);
        let r = Frame::filled(3, 3, 2, 0.4);
        assert_eq!(blend(&w, &r, &SoftMask::ones(3, 3)).unwrap(), w);
        let zero = SoftMask::from_plane(Plane::zeros(3, 3)).unwrap();
        assert_eq!(blend(&w, &r, &zero).unwrap(), r);
        let half = SoftMask::from_plane(Plane::filled(3, 3, 0.5)).unwrap();
        let out = blend(&w, &r, &half).unwrap();
        assert!(out.channels()[1].as_slice().iter().all(|v| (v - 0.3).abs() < 1e-15));
        assert!(blend(&w, &Frame::filled(3, 4, 2, 0.0), &half).is_err());
    }

    #[test]
    fn blend_is_affine_in_mask() {
        let w = Frame::from_plane(Plane::from_fn(4, 4, |y, x| (y + x) as f64 / 8.0)).unwrap();
        let r = Frame::from_plane(Plane::from_fn(4, 4, |y, x| (y * x) as f64 / 9.0)).unwrap();
        let at = |t: f64| {
            blend(&w, &r, &SoftMask::from_plane(Plane::filled(4, 4, t)).unwrap()).unwrap()
        };
        let (b0, b25, b5, b1) = (at(0.0), at(0.25), at(0.5), at(1.0));
        for i in 0..16 {
            let v = |f: &Frame| f.channel(0).as_slice()[i];
            assert!((v(&b5) - 0.5 * (v(&b0) + v(&b1))).abs() < 1e-15);
            assert!((v(&b25) - (0.75 * v(&b0) + 0.25 * v(&b1))).abs() < 1e-15);
        }
    }

    #[test]
    fn window_of_one_frame() {
        let f = Frame::filled(8, 8, 1, 0.5);
        let s = register_window(
            std::slice::from_ref(&f),
            0,
            &FbaConfig::default(),
            &FlowParams::default(),
        )
        .unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.frames[0], f);
    }

    #[test]
    fn window_errors() {
        let cfg = FbaConfig::default();
        let p = FlowParams::default();
        assert!(register_window(&[], 0, &cfg, &p).is_err());
        let f = Frame::filled(8, 8, 1, 0.5);
        assert!(register_window(&[f.clone()], 1, &cfg, &p).is_err());
        assert!(register_window(&[f, Frame::filled(8, 9, 1, 0.5)], 0, &cfg, &p).is_err());
    }

    proptest! {
        #[test]
        fn larger_radius_never_raises_mask(seed in 0u64..500, r in 0usize..6) {
            let m = mask_from(24, 24, |y, x| {
                let h = (y as u64 * 2654435761 ^ x as u64 * 40503 ^ seed).wrapping_mul(0x9E3779B97F4A7C15);
                if (h >> 60) == 0 { 0.0 } else { 1.0 }
            });
            let small = grow_disc(&m, r, MaskMode::Conservative);
            let large = grow_disc(&m, r + 1, MaskMode::Conservative);
            for (a, b) in small.values().iter().zip(large.values()) {
                prop_assert!(b <= a);
            }
        }

        #[test]
        fn blend_stays_between_inputs(a in 0.0f64..1.0, b in 0.0f64..1.0, t in 0.0f64..=1.0) {
            let w = Frame::filled(2, 2, 1, a);
            let r = Frame::filled(2, 2, 1, b);
            let m = SoftMask::from_plane(Plane::filled(2, 2, t)).unwrap();
            let v = blend(&w, &r, &m).unwrap().channel(0).get(0, 0);
            prop_assert!(v >= a.min(b) - 1e-15 && v <= a.max(b) + 1e-15);
        }
    }
}
