//! Dual square-ring partition: a centered box and the ring around it.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::{FeatureMap, Tensor};
use crate::{Error, Result};

/// Side ratio of the center box relative to the feature map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    ratio: f64,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self { ratio: 0.5 }
    }
}

impl PartitionSpec {
    pub fn new(ratio: f64) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::InvalidRatio(ratio));
        }
        Ok(Self { ratio })
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }
}

/// Half-open grid rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionBox {
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
}

impl RegionBox {
    pub fn rows(&self) -> usize {
        self.row_end - self.row_start
    }

    pub fn cols(&self) -> usize {
        self.col_end - self.col_start
    }

    pub fn area(&self) -> usize {
        self.rows() * self.cols()
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_start..self.row_end).contains(&row) && (self.col_start..self.col_end).contains(&col)
    }
}

fn centered_span(dim: usize, ratio: f64) -> Result<(usize, usize)> {
    let side = math::round(ratio * dim as f64) as usize;
    if side < 1 {
        return Err(Error::CenterTooSmall);
    }
    let side = side.min(dim);
    let margin = dim - side;
    // odd margins push the box one cell toward the bottom/right
    let start = margin.div_ceil(2);
    Ok((start, start + side))
}

/// Centered box with sides `round(ratio * dim)`.
pub fn center_box(height: usize, width: usize, spec: PartitionSpec) -> Result<RegionBox> {
    if height < 2 || width < 2 {
        return Err(Error::GridTooSmall { height, width });
    }
    let (row_start, row_end) = centered_span(height, spec.ratio)?;
    let (col_start, col_end) = centered_span(width, spec.ratio)?;
    Ok(RegionBox {
        row_start,
        row_end,
        col_start,
        col_end,
    })
}

/// Boolean cell mask over an `H x W` grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    height: usize,
    width: usize,
    cells: Vec<bool>,
}

impl RegionMask {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cells: vec![true; height * width],
        }
    }

    pub fn from_box(height: usize, width: usize, b: &RegionBox) -> Self {
        let cells = (0..height * width).map(|i| b.contains(i / width, i % width)).collect();
        Self { height, width, cells }
    }

    pub fn from_cells(height: usize, width: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != height * width {
            return Err(Error::Shape(alloc::format!(
                "mask of {} cells for a {}x{} grid",
                cells.len(),
                height,
                width
            )));
        }
        Ok(Self { height, width, cells })
    }

    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            cells: self.cells.iter().map(|c| !c).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Flat indices of the selected cells.
    pub fn indices(&self) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| c.then_some(i))
            .collect()
    }
}

/// Center and surround masks for an `H x W` grid.
pub fn partition_masks(
    height: usize,
    width: usize,
    spec: PartitionSpec,
) -> Result<(RegionBox, RegionMask, RegionMask)> {
    let b = center_box(height, width, spec)?;
    let center = RegionMask::from_box(height, width, &b);
    let surround = center.complement();
    Ok((b, center, surround))
}

/// Crops the center box out of every sample and returns the surround mask.
pub fn split_center_surround(fm: &FeatureMap, spec: PartitionSpec) -> Result<(FeatureMap, RegionMask)> {
    let [n, c, h, w] = fm.shape();
    let b = center_box(h, w, spec)?;
    let mut center = Tensor::zeros(n, c, b.rows(), b.cols());
    for s in 0..n {
        for ch in 0..c {
            for (r, y) in (b.row_start..b.row_end).enumerate() {
                for (q, x) in (b.col_start..b.col_end).enumerate() {
                    center.set(s, ch, r, q, fm.get(s, ch, y, x));
                }
            }
        }
    }
    let surround = RegionMask::from_box(h, w, &b).complement();
    Ok((center, surround))
}
