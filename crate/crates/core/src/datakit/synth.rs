use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RasterPair;
use crate::grid::BinaryMap;
use crate::{Error, Result};

/// Roof brightness levels; each raster draws its buildings from a shuffle of
/// these so no two buildings in one raster share a level.
const ROOF_LEVELS: [i32; 4] = [160, 182, 204, 226];

/// `n` rasters of textured ground with 1-4 bright axis-aligned rectangles.
/// Rectangle sides lie in `[size/8, size/3]`, so coverage stays in
/// `(0, 4/9]`. Output is a pure function of `(n, size, seed)`.
pub fn synth_corpus(n: usize, size: usize, seed: u64) -> Result<Vec<RasterPair>> {
    if n == 0 {
        return Err(Error::InvalidSize("corpus needs at least one raster".into()));
    }
    if size < 32 || !size.is_multiple_of(32) {
        return Err(Error::InvalidSize(format!(
            "raster size {size} must be a multiple of 32 (networks downsample 32x)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| one_raster(&mut rng, i, size)).collect()
}

fn one_raster(rng: &mut ChaCha8Rng, index: usize, size: usize) -> Result<RasterPair> {
    let base = rng.gen_range(60..=110);
    let tint: [i32; 3] = [rng.gen_range(-8..=8), rng.gen_range(-8..=8), rng.gen_range(-8..=8)];
    let (fx, fy) = (rng.gen_range(0.05..0.25), rng.gen_range(0.05..0.25));
    let (px, py) = (rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3));
    let amp = rng.gen_range(6.0..16.0);

    let mut level = vec![None::<i32>; size * size];
    let mut levels = ROOF_LEVELS;
    levels.shuffle(rng);
    let count = rng.gen_range(1..=4);
    let (lo, hi) = (size / 8, size / 3);
    for &roof in levels.iter().take(count) {
        let h = rng.gen_range(lo..=hi);
        let w = rng.gen_range(lo..=hi);
        let r0 = rng.gen_range(0..=size - h);
        let c0 = rng.gen_range(0..=size - w);
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                level[r * size + c] = Some(roof);
            }
        }
    }

    let mut image = RgbImage::new(size as u32, size as u32);
    for r in 0..size {
        for c in 0..size {
            let px_val = match level[r * size + c] {
                Some(roof) => {
                    let jitter = rng.gen_range(-6..=6);
                    tint.map(|t| roof + t / 2 + jitter)
                }
                None => {
                    let wave = amp * (fx * c as f64 + px).sin() * (fy * r as f64 + py).cos();
                    let noise = rng.gen_range(-12..=12);
                    tint.map(|t| base + t + wave as i32 + noise)
                }
            };
            image.put_pixel(c as u32, r as u32, Rgb(px_val.map(|v| v.clamp(0, 255) as u8)));
        }
    }
    let mask = BinaryMap::from_fn(size, size, |r, c| level[r * size + c].is_some());
    RasterPair::new(format!("syn{index:04}"), image, mask)
}
