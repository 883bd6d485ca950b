use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the binary consistency mask is refined before smoothing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Grow the inconsistent region by the disc, discarding pixels near any
    /// registration failure.
    #[default]
    Conservative,
    /// Grow the consistent region by the disc.
    Literal,
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conservative" => Ok(MaskMode::Conservative),
            "literal" => Ok(MaskMode::Literal),
            other => Err(Error::Config(format!(
                "unknown mask mode {other:?} (expected conservative or literal)"
            ))),
        }
    }
}

/// Every tunable of the registration + fusion pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FbaConfig {
    /// Temporal half window; `2M + 1` frames are fused.
    pub half_window: usize,
    /// Square block side, even.
    pub block_size: usize,
    pub stride: usize,
    /// Fourier weight exponent; 0 is the plain mean.
    pub exponent: f64,
    /// Std of the Gaussian applied to block magnitude spectra. `None` means
    /// `50 / block_size`.
    pub spectrum_sigma: Option<f64>,
    /// Round-trip tolerance in pixels.
    pub consistency_tol: f64,
    /// Disc radius of the mask morphology.
    pub mask_radius: usize,
    /// Std of the Gaussian applied to the refined mask.
    pub mask_sigma: f64,
    pub mask_mode: MaskMode,
    /// Resolution ratio at which flow is estimated.
    pub flow_scale: f64,
    pub iterations: usize,
    /// Stop iterating once the sequence-average squared change drops below this.
    pub early_stop: Option<f64>,
    pub sharpen_amount: f64,
    pub sharpen_radius: f64,
}

impl Default for FbaConfig {
    fn default() -> Self {
        FbaConfig {
            half_window: 3,
            block_size: 128,
            stride: 64,
            exponent: 11.0,
            spectrum_sigma: None,
            consistency_tol: 1.0,
            mask_radius: 5,
            mask_sigma: 5.0,
            mask_mode: MaskMode::Conservative,
            flow_scale: 1.0 / 3.0,
            iterations: 1,
            early_stop: None,
            sharpen_amount: 0.0,
            sharpen_radius: 1.0,
        }
    }
}

pub fn default_config() -> FbaConfig {
    FbaConfig::default()
}

impl FbaConfig {
    /// Effective spectrum smoothing std.
    pub fn spectrum_sigma(&self) -> f64 {
        self.spectrum_sigma
            .unwrap_or(50.0 / self.block_size as f64)
    }

    pub fn window_len(&self) -> usize {
        2 * self.half_window + 1
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.block_size == 0 || self.block_size % 2 != 0 {
            return fail(format!("block_size must be even and positive, got {}", self.block_size));
        }
        if self.stride == 0 || self.stride > self.block_size {
            return fail(format!(
                "stride must satisfy 0 < stride <= block_size, got {}",
                self.stride
            ));
        }
        if !(self.exponent >= 0.0 && self.exponent.is_finite()) {
            return fail(format!("exponent must be finite and >= 0, got {}", self.exponent));
        }
        if let Some(s) = self.spectrum_sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return fail(format!("spectrum_sigma must be >= 0, got {s}"));
            }
        }
        if !(self.consistency_tol >= 0.0) {
            return fail(format!("consistency_tol must be >= 0, got {}", self.consistency_tol));
        }
        if !(self.mask_sigma >= 0.0 && self.mask_sigma.is_finite()) {
            return fail(format!("mask_sigma must be >= 0, got {}", self.mask_sigma));
        }
        if !(self.flow_scale > 0.0 && self.flow_scale <= 1.0) {
            return fail(format!("flow_scale must be in (0, 1], got {}", self.flow_scale));
        }
        if !(self.sharpen_amount >= 0.0 && self.sharpen_amount.is_finite()) {
            return fail(format!("sharpen_amount must be >= 0, got {}", self.sharpen_amount));
        }
        if !(self.sharpen_radius > 0.0 && self.sharpen_radius.is_finite()) {
            return fail(format!("sharpen_radius must be > 0, got {}", self.sharpen_radius));
        }
        Ok(())
    }
}
