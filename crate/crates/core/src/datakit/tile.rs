use image::{GenericImageView, RgbImage};

use super::{RasterPair, TileSample};
use crate::{Error, Result};

pub const DEFAULT_TILE_SIZE: usize = 224;
pub const MIN_TILE_SIZE: usize = 32;
pub const DEFAULT_MIN_COVERAGE: f64 = 0.05;

/// Cut every `size x size` window whose origin lies on the `stride` grid and
/// which fits entirely inside the raster. Partial windows at the right and
/// bottom edges are dropped.
pub fn tile(pair: &RasterPair, size: usize, stride: usize) -> Result<Vec<TileSample>> {
    if size < MIN_TILE_SIZE {
        return Err(Error::InvalidSize(format!("tile size {size} is below {MIN_TILE_SIZE}")));
    }
    if stride == 0 {
        return Err(Error::InvalidSize("stride must be at least 1".into()));
    }
    let (h, w) = (pair.height(), pair.width());
    if h < size || w < size {
        return Err(Error::RasterTooSmall {
            height: h,
            width: w,
            size,
        });
    }
    let mut tiles = Vec::with_capacity(((h - size) / stride + 1) * ((w - size) / stride + 1));
    for row in (0..=h - size).step_by(stride) {
        for col in (0..=w - size).step_by(stride) {
            let image: RgbImage = pair
                .image
                .view(col as u32, row as u32, size as u32, size as u32)
                .to_image();
            let mask = pair.mask.crop(row, col, size, size);
            tiles.push(TileSample::new(pair.id.clone(), (row, col), image, mask));
        }
    }
    Ok(tiles)
}

/// Keep tiles with `coverage >= min_coverage`, preserving order.
pub fn filter_by_coverage(tiles: Vec<TileSample>, min_coverage: f64) -> Vec<TileSample> {
    tiles.into_iter().filter(|t| t.coverage >= min_coverage).collect()
}
