//! Raster tiling, coverage filtering, dataset splits and the synthetic
//! rectangle corpus used for desk-scale runs.

mod io;
mod split;
mod synth;
mod tile;

pub use io::{
    load_dataset, read_raster_dir, read_tiles, write_dataset, write_raster_dir, ManifestRecord, MANIFEST_FILE,
};
pub use split::{split, DatasetSplit};
pub use synth::synth_corpus;
pub use tile::{filter_by_coverage, tile, DEFAULT_MIN_COVERAGE, DEFAULT_TILE_SIZE, MIN_TILE_SIZE};

use image::RgbImage;

use crate::grid::BinaryMap;
use crate::{Error, Result};

/// A full-size image with its building mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterPair {
    pub image: RgbImage,
    pub mask: BinaryMap,
    pub id: String,
}

impl RasterPair {
    pub fn new(id: impl Into<String>, image: RgbImage, mask: BinaryMap) -> Result<Self> {
        let id = id.into();
        let dims = (image.height() as usize, image.width() as usize);
        if dims != mask.dims() {
            return Err(Error::InvalidRaster(format!(
                "{id}: image is {}x{} but mask is {}x{}",
                dims.0,
                dims.1,
                mask.height(),
                mask.width()
            )));
        }
        Ok(Self { image, mask, id })
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }
}

/// One square window cut from a [`RasterPair`].
#[derive(Debug, Clone, PartialEq)]
pub struct TileSample {
    pub image: RgbImage,
    pub mask: BinaryMap,
    pub source_id: String,
    /// `(row, col)` of the window's top-left pixel in the source raster.
    pub offset: (usize, usize),
    /// Fraction of mask pixels set.
    pub coverage: f64,
}

impl TileSample {
    pub fn new(source_id: impl Into<String>, offset: (usize, usize), image: RgbImage, mask: BinaryMap) -> Self {
        let coverage = coverage_of(&mask);
        Self {
            image,
            mask,
            source_id: source_id.into(),
            offset,
            coverage,
        }
    }

    /// `<source>_<row>_<col>`, unique within a corpus.
    pub fn tile_id(&self) -> String {
        format!("{}_{}_{}", self.source_id, self.offset.0, self.offset.1)
    }

    pub fn size(&self) -> usize {
        self.mask.height()
    }
}

pub(crate) fn coverage_of(mask: &BinaryMap) -> f64 {
    if mask.is_empty() {
        0.0
    } else {
        mask.count_ones() as f64 / mask.len() as f64
    }
}
