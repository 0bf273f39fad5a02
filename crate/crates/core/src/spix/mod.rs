//! Soft superpixels on a regular seed grid: each pixel distributes its mass
//! over the 3×3 block of cells around the cell that owns it.

mod decode;
mod ops;

pub use decode::{decode_hard, enforce_connectivity, SuperpixelMap};

use crate::error::{Error, Result};

/// Marks a neighbor slot that falls outside the grid.
pub const NO_CELL: u32 = u32::MAX;

/// Slot of the owning cell in the 9-neighborhood; slot `k` is the offset
/// `(k / 3 - 1, k % 3 - 1)` in (row, column).
pub const OWNER_SLOT: usize = 4;

/// Regular tiling of an H×W image into cells of side `s` (border cells may
/// be smaller).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub s: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Builds the grid, rejecting `s` larger than the shorter image side.
pub fn init_grid(height: usize, width: usize, s: usize) -> Result<GridSpec> {
    if height == 0 || width == 0 || s == 0 {
        return Err(Error::param("S", format!("extents and interval must be ≥ 1, got {height}×{width}, S={s}")));
    }
    if s > height.min(width) {
        return Err(Error::param("S", format!("interval {s} exceeds the shorter side of {height}×{width}")));
    }
    Ok(GridSpec { height, width, s, rows: height.div_ceil(s), cols: width.div_ceil(s) })
}

impl GridSpec {
    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn cell_id(&self, row: usize, col: usize) -> u32 {
        (row * self.cols + col) as u32
    }

    pub fn cell_pos(&self, id: u32) -> (usize, usize) {
        (id as usize / self.cols, id as usize % self.cols)
    }

    pub fn owner(&self, x: usize, y: usize) -> u32 {
        self.cell_id(y / self.s, x / self.s)
    }

    /// Cell in slot `k` of pixel (x, y), or [`NO_CELL`] past the border.
    pub fn neighbor(&self, x: usize, y: usize, k: usize) -> u32 {
        let r = (y / self.s) as isize + (k / 3) as isize - 1;
        let c = (x / self.s) as isize + (k % 3) as isize - 1;
        if r < 0 || c < 0 || r >= self.rows as isize || c >= self.cols as isize {
            NO_CELL
        } else {
            self.cell_id(r as usize, c as usize)
        }
    }

    /// The nine slots of every pixel, raster order.
    pub fn neighbor_table(&self) -> Vec<[u32; 9]> {
        let mut out = Vec::with_capacity(self.height * self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(std::array::from_fn(|k| self.neighbor(x, y, k)));
            }
        }
        out
    }

    /// Label map of the plain tiling.
    pub fn tiling(&self) -> Vec<u32> {
        (0..self.height).flat_map(|y| (0..self.width).map(move |x| (x, y))).map(|(x, y)| self.owner(x, y)).collect()
    }
}
