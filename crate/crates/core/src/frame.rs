//! Image containers shared by every stage of the pipeline.
//!
//! A [`Plane`] is a single real-valued 2D grid stored row-major. A [`Frame`]
//! stacks one or three planes of identical size; pixel values are nominally
//! in `[0, 1]` and every value is finite.

use crate::error::{Error, Result};

/// Single-channel real grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Plane {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Input(format!(
                "plane of {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Plane {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Plane {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Multi-channel image with planar storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: Vec<Plane>,
}

impl Frame {
    pub fn new(channels: Vec<Plane>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::Input("frame needs at least one channel".into()))?;
        let (height, width) = first.dims();
        if height == 0 || width == 0 {
            return Err(Error::Input("frame dimensions must be positive".into()));
        }
        if let Some(bad) = channels.iter().find(|c| c.dims() != (height, width)) {
            return Err(Error::dims((height, width), bad.dims()));
        }
        if channels
            .iter()
            .any(|c| c.as_slice().iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Input("frame contains non-finite values".into()));
        }
        Ok(Frame {
            height,
            width,
            channels,
        })
    }

    /// Builds a frame from channel-interleaved samples (`y, x, c` order).
    pub fn from_interleaved(
        height: usize,
        width: usize,
        channels: usize,
        data: &[f64],
    ) -> Result<Self> {
        if channels == 0 || data.len() != height * width * channels {
            return Err(Error::Input(format!(
                "{height}x{width}x{channels} frame needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        let planes = (0..channels)
            .map(|c| {
                Plane::from_vec(
                    height,
                    width,
                    data.iter().skip(c).step_by(channels).copied().collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Frame::new(planes)
    }

    pub fn from_plane(plane: Plane) -> Result<Self> {
        Frame::new(vec![plane])
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Frame {
            height,
            width,
            channels: vec![Plane::filled(height, width, value); channels],
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &Plane {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[Plane] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Plane> {
        self.channels
    }

    /// Samples in `y, x, c` order.
    pub fn to_interleaved(&self) -> Vec<f64> {
        let nc = self.channels.len();
        let mut out = vec![0.0; self.height * self.width * nc];
        for (c, plane) in self.channels.iter().enumerate() {
            for (i, &v) in plane.as_slice().iter().enumerate() {
                out[i * nc + c] = v;
            }
        }
        out
    }

    /// Luminance as the plain channel mean.
    pub fn to_gray(&self) -> Plane {
        if self.channels.len() == 1 {
            return self.channels[0].clone();
        }
        let n = self.channels.len() as f64;
        let mut out = Plane::zeros(self.height, self.width);
        for plane in &self.channels {
            for (o, &v) in out.as_mut_slice().iter_mut().zip(plane.as_slice()) {
                *o += v;
            }
        }
        for o in out.as_mut_slice() {
            *o /= n;
        }
        out
    }

    /// Applies `f` to every channel; `f` must return planes of one common size.
    pub fn map_channels(&self, f: impl Fn(&Plane) -> Plane) -> Frame {
        let channels: Vec<Plane> = self.channels.iter().map(f).collect();
        let (height, width) = channels[0].dims();
        debug_assert!(channels.iter().all(|c| c.dims() == (height, width)));
        Frame {
            height,
            width,
            channels,
        }
    }

    pub fn clamped(&self) -> Frame {
        self.map_channels(|p| p.map(|v| v.clamp(0.0, 1.0)))
    }

    pub(crate) fn check_same_shape(&self, other: &Frame) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        if self.num_channels() != other.num_channels() {
            return Err(Error::Dimension {
                expected: format!("{} channels", self.num_channels()),
                got: format!("{} channels", other.num_channels()),
            });
        }
        Ok(())
    }

    /// Largest absolute per-sample difference; panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Frame) -> f64 {
        assert_eq!(self.dims(), other.dims());
        assert_eq!(self.num_channels(), other.num_channels());
        self.channels
            .iter()
            .zip(&other.channels)
            .flat_map(|(a, b)| a.as_slice().iter().zip(b.as_slice()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Reflects an out-of-range index back into `0..n` without repeating the
/// border sample (`-1 -> 1`, `n -> n - 2`).
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

pub fn mirror_pad_plane(plane: &Plane, margin: usize) -> Plane {
    let (h, w) = plane.dims();
    let m = margin as isize;
    Plane::from_fn(h + 2 * margin, w + 2 * margin, |y, x| {
        plane.get(
            reflect_index(y as isize - m, h),
            reflect_index(x as isize - m, w),
        )
    })
}

/// Pads every channel by `margin` pixels on each side with mirror reflection.
pub fn mirror_pad(frame: &Frame, margin: usize) -> Result<Frame> {
    if margin >= frame.height().min(frame.width()) {
        return Err(Error::Config(format!(
            "padding margin {margin} must be smaller than the frame size {}x{}",
            frame.height(),
            frame.width()
        )));
    }
    if margin == 0 {
        return Ok(frame.clone());
    }
    Ok(frame.map_channels(|p| mirror_pad_plane(p, margin)))
}

pub fn crop_plane(plane: &Plane, top: usize, left: usize, height: usize, width: usize) -> Plane {
    Plane::from_fn(height, width, |y, x| plane.get(y + top, x + left))
}

pub fn crop(frame: &Frame, top: usize, left: usize, height: usize, width: usize) -> Result<Frame> {
    if top + height > frame.height() || left + width > frame.width() || height == 0 || width == 0 {
        return Err(Error::Input(format!(
            "crop {height}x{width}+{top}+{left} outside {}x{} frame",
            frame.height(),
            frame.width()
        )));
    }
    Ok(frame.map_channels(|p| crop_plane(p, top, left, height, width)))
}

/// Normalized Gaussian taps truncated at three standard deviations.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable Gaussian blur with mirror boundary; `sigma == 0` is the identity.
pub fn gaussian_blur(plane: &Plane, sigma: f64) -> Plane {
    if sigma <= 0.0 {
        return plane.clone();
    }
    let taps = gaussian_kernel(sigma);
    let r = (taps.len() / 2) as isize;
    let (h, w) = plane.dims();
    let mut tmp = Plane::zeros(h, w);
    for y in 0..h {
        let row = plane.row(y);
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * row[reflect_index(x as isize + k as isize - r, w)];
            }
            tmp.set(y, x, acc);
        }
    }
    let mut out = Plane::zeros(h, w);
    let mut col = vec![0.0; h];
    for x in 0..w {
        for (y, c) in col.iter_mut().enumerate() {
            *c = tmp.get(y, x);
        }
        for y in 0..h {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * col[reflect_index(y as isize + k as isize - r, h)];
            }
            out.set(y, x, acc);
        }
    }
    out
}
