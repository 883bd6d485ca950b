//! Sequence-level restoration: a sliding temporal window around every frame,
//! optional repeated passes, optional unsharp masking.

use rayon::prelude::*;

use crate::bench::mse;
use crate::config::FbaConfig;
use crate::error::{Error, Result};
use crate::fba::fuse_stack;
use crate::flow::FlowParams;
use crate::frame::{gaussian_blur, Frame};
use crate::register::{register_window, RegisteredStack};

/// Mean squared change of every frame in every pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationReport {
    /// `changes[pass][frame]`; pass 0 compares against the input.
    pub changes: Vec<Vec<f64>>,
}

impl IterationReport {
    pub fn passes(&self) -> usize {
        self.changes.len()
    }

    /// Sequence-average change per pass.
    pub fn pass_means(&self) -> Vec<f64> {
        self.changes
            .iter()
            .map(|row| row.iter().sum::<f64>() / row.len() as f64)
            .collect()
    }
}

/// Inclusive window `[i - M, i + M]` clipped to the sequence.
pub fn window_bounds(len: usize, index: usize, half_window: usize) -> (usize, usize) {
    (
        index.saturating_sub(half_window),
        (index + half_window).min(len - 1),
    )
}

/// Restores one frame and also returns the registered window it was fused from.
pub fn deblur_frame_detailed(
    sequence: &[Frame],
    index: usize,
    cfg: &FbaConfig,
    params: &FlowParams,
) -> Result<(Frame, RegisteredStack)> {
    if sequence.is_empty() {
        return Err(Error::Input("empty sequence".into()));
    }
    if index >= sequence.len() {
        return Err(Error::Input(format!(
            "frame index {index} outside sequence of {}",
            sequence.len()
        )));
    }
    let (lo, hi) = window_bounds(sequence.len(), index, cfg.half_window);
    let stack = register_window(&sequence[lo..=hi], index - lo, cfg, params)?;
    let out = fuse_stack(&stack, cfg)?;
    Ok((out, stack))
}

pub fn deblur_frame(
    sequence: &[Frame],
    index: usize,
    cfg: &FbaConfig,
    params: &FlowParams,
) -> Result<Frame> {
    deblur_frame_detailed(sequence, index, cfg, params).map(|(f, _)| f)
}

/// Runs `cfg.iterations` passes over the sequence. Each pass reads only the
/// previous pass's output.
pub fn deblur_sequence(
    sequence: &[Frame],
    cfg: &FbaConfig,
    params: &FlowParams,
) -> Result<(Vec<Frame>, IterationReport)> {
    if sequence.is_empty() {
        return Err(Error::Input("empty sequence".into()));
    }
    cfg.validate()?;
    let mut current = sequence.to_vec();
    let mut report = IterationReport::default();
    for _ in 0..cfg.iterations {
        let next = (0..current.len())
            .into_par_iter()
            .map(|i| deblur_frame(&current, i, cfg, params))
            .collect::<Result<Vec<_>>>()?;
        let changes: Vec<f64> = next.iter().zip(&current).map(|(a, b)| mse(a, b)).collect();
        let mean = changes.iter().sum::<f64>() / changes.len() as f64;
        report.changes.push(changes);
        current = next;
        if cfg.early_stop.is_some_and(|tol| mean < tol) {
            break;
        }
    }
    if cfg.sharpen_amount > 0.0 {
        current = current
            .iter()
            .map(|f| unsharp_mask(f, cfg.sharpen_amount, cfg.sharpen_radius))
            .collect::<Result<_>>()?;
    }
    Ok((current, report))
}

/// `frame + amount * (frame - G_radius * frame)`, clamped to `[0, 1]`.
pub fn unsharp_mask(frame: &Frame, amount: f64, radius: f64) -> Result<Frame> {
    if !(amount >= 0.0 && amount.is_finite()) {
        return Err(Error::Config(format!("sharpen amount must be >= 0, got {amount}")));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Config(format!("sharpen radius must be > 0, got {radius}")));
    }
    if amount == 0.0 {
        return Ok(frame.clone());
    }
    Ok(frame.map_channels(|p| {
        let blurred = gaussian_blur(p, radius);
        let mut out = p.clone();
        for (o, b) in out.as_mut_slice().iter_mut().zip(blurred.as_slice()) {
            *o = (*o + amount * (*o - b)).clamp(0.0, 1.0);
        }
        out
    }))
}
