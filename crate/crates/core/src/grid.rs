//! Block tiling for the local Fourier fusion.
//!
//! Centers follow the `1:s:m` stepping of the fusion loop (stored 0-based
//! here, so the first center is row 0). Frames are mirror padded by `b/2`,
//! which makes the block centered at original pixel `(r, c)` start at padded
//! pixel `(r, c)`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockGrid {
    block_size: usize,
    stride: usize,
    height: usize,
    width: usize,
    row_centers: Vec<usize>,
    col_centers: Vec<usize>,
}

fn axis_centers(len: usize, block: usize, stride: usize) -> Vec<usize> {
    let mut centers: Vec<usize> = (0..len).step_by(stride).collect();
    // With s > b/2 the stepping can stop short of the last pixel.
    let last = *centers.last().expect("len >= 1");
    if last + block / 2 < len {
        centers.push(len - 1);
    }
    centers
}

pub fn make_block_grid(height: usize, width: usize, b: usize, s: usize) -> Result<BlockGrid> {
    if height == 0 || width == 0 {
        return Err(Error::Config(format!(
            "frame dimensions must be positive, got {height}x{width}"
        )));
    }
    if b == 0 || b % 2 != 0 {
        return Err(Error::Config(format!("block size must be even and positive, got {b}")));
    }
    if s == 0 || s > b {
        return Err(Error::Config(format!(
            "stride must satisfy 0 < s <= b, got s={s}, b={b}"
        )));
    }
    Ok(BlockGrid {
        block_size: b,
        stride: s,
        height,
        width,
        row_centers: axis_centers(height, b, s),
        col_centers: axis_centers(width, b, s),
    })
}

impl BlockGrid {
    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn pad_margin(&self) -> usize {
        self.block_size / 2
    }

    pub fn frame_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn padded_dims(&self) -> (usize, usize) {
        (self.height + self.block_size, self.width + self.block_size)
    }

    pub fn row_centers(&self) -> &[usize] {
        &self.row_centers
    }

    pub fn col_centers(&self) -> &[usize] {
        &self.col_centers
    }

    pub fn len(&self) -> usize {
        self.row_centers.len() * self.col_centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Block centers in original-frame coordinates, row-major.
    pub fn centers(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row_centers
            .iter()
            .flat_map(move |&r| self.col_centers.iter().map(move |&c| (r, c)))
    }

    /// Number of blocks covering original pixel `(y, x)`.
    pub fn coverage(&self, y: usize, x: usize) -> usize {
        let half = self.block_size / 2;
        let hits = |centers: &[usize], p: usize| {
            centers
                .iter()
                .filter(|&&c| c <= p + half && p < c + half)
                .count()
        };
        hits(&self.row_centers, y) * hits(&self.col_centers, x)
    }
}
