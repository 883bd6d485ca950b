//! Video camera-shake removal.
//!
//! Each frame of a hand-held sequence is restored from its temporal
//! neighbours in two stages: the neighbours are registered onto the frame
//! with forward/backward optical flow, keeping only round-trip consistent
//! pixels ([`register`]), and the registered stack is then fused block by
//! block in the Fourier domain, weighting every frequency of every frame by
//! its (smoothed) spectral magnitude ([`fba`]). Because hand tremor is random,
//! each frequency is usually well preserved in at least one frame.

pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod fba;
pub mod flow;
pub mod frame;
pub mod grid;
pub mod io;
pub mod pipeline;
pub mod register;
pub mod warp;

pub use config::{default_config, FbaConfig, MaskMode};
pub use error::{Error, Result};
pub use flow::{estimate_flow_pair, estimate_flow_tvl1, upsample_flow, FlowField, FlowParams};
pub use frame::{mirror_pad, Frame, Plane};
pub use grid::{make_block_grid, BlockGrid};
pub use register::{ConsistencyMap, RegisteredStack, SoftMask};
