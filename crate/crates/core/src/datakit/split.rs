use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TileSample;
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<TileSample>,
    pub val: Vec<TileSample>,
    pub test: Vec<TileSample>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

// Guards floor() against products like 0.29 * 100 = 28.999999999999996.
const FLOOR_SLACK: f64 = 1e-9;

/// Seeded shuffle, then a contiguous train/val/test partition. Validation
/// and test sizes are floored; the remainder goes to train.
pub fn split(tiles: Vec<TileSample>, fractions: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::InvalidFractions(format!("{fractions:?} has a negative entry")));
    }
    if ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidFractions(format!(
            "{fractions:?} sums to {}, not 1",
            ft + fv + fs
        )));
    }
    let mut tiles = tiles;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    tiles.shuffle(&mut rng);
    let n = tiles.len() as f64;
    let n_val = (n * fv + FLOOR_SLACK).floor() as usize;
    let n_test = (n * fs + FLOOR_SLACK).floor() as usize;
    let n_train = tiles.len() - n_val - n_test;
    let test = tiles.split_off(n_train + n_val);
    let val = tiles.split_off(n_train);
    Ok(DatasetSplit {
        train: tiles,
        val,
        test,
        seed,
    })
}
