//! On-disk layout: `<root>/{train,val,test}/{img,msk}/<source>_<row>_<col>.png`
//! plus `<root>/manifest.csv`. Masks are stored as 0/255 grayscale and
//! binarized at 128 when read.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use super::{DatasetSplit, RasterPair, TileSample};
use crate::grid::BinaryMap;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub split: String,
    pub id: String,
    pub source_id: String,
    pub row: usize,
    pub col: usize,
    pub coverage: f64,
    pub seed: u64,
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn save_rgb(image: &RgbImage, path: &Path) -> Result<()> {
    image.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn save_mask(mask: &BinaryMap, path: &Path) -> Result<()> {
    let img = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn open_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8())
}

fn open_mask(path: &Path) -> Result<BinaryMap> {
    let g = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    Ok(BinaryMap::threshold(
        g.height() as usize,
        g.width() as usize,
        g.as_raw(),
        128u8,
    ))
}

/// `stem -> path` for the PNG files in `dir` (missing dir = empty).
fn png_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

pub fn write_raster_dir(pairs: &[RasterPair], dir: &Path) -> Result<()> {
    let (img_dir, msk_dir) = (dir.join("img"), dir.join("msk"));
    mkdir(&img_dir)?;
    mkdir(&msk_dir)?;
    for p in pairs {
        save_rgb(&p.image, &img_dir.join(format!("{}.png", p.id)))?;
        save_mask(&p.mask, &msk_dir.join(format!("{}.png", p.id)))?;
    }
    Ok(())
}

/// Read `<dir>/img/<id>.png` + `<dir>/msk/<id>.png` pairs, sorted by id.
pub fn read_raster_dir(dir: &Path) -> Result<Vec<RasterPair>> {
    let images = png_stems(&dir.join("img"))?;
    let masks = png_stems(&dir.join("msk"))?;
    let unpaired: Vec<String> = images
        .keys()
        .filter(|k| !masks.contains_key(*k))
        .chain(masks.keys().filter(|k| !images.contains_key(*k)))
        .cloned()
        .collect();
    if !unpaired.is_empty() {
        return Err(Error::Unpaired(unpaired));
    }
    if images.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no image/mask pairs under {}",
            dir.display()
        )));
    }
    images
        .iter()
        .map(|(id, path)| RasterPair::new(id.clone(), open_rgb(path)?, open_mask(&masks[id])?))
        .collect()
}

pub fn write_dataset(split: &DatasetSplit, root: &Path) -> Result<Vec<ManifestRecord>> {
    let mut records = Vec::with_capacity(split.len());
    for (name, tiles) in SPLITS.iter().zip([&split.train, &split.val, &split.test]) {
        let (img_dir, msk_dir) = (root.join(name).join("img"), root.join(name).join("msk"));
        mkdir(&img_dir)?;
        mkdir(&msk_dir)?;
        for t in tiles {
            let id = t.tile_id();
            save_rgb(&t.image, &img_dir.join(format!("{id}.png")))?;
            save_mask(&t.mask, &msk_dir.join(format!("{id}.png")))?;
            records.push(ManifestRecord {
                split: name.to_string(),
                id,
                source_id: t.source_id.clone(),
                row: t.offset.0,
                col: t.offset.1,
                coverage: t.coverage,
                seed: split.seed,
            });
        }
    }
    let path = root.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Format {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    for r in &records {
        w.serialize(r).map_err(|e| Error::Format {
            path: path.clone(),
            reason: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(records)
}

fn parse_tile_id(id: &str) -> Option<(String, usize, usize)> {
    let mut parts = id.rsplitn(3, '_');
    let col = parts.next()?.parse().ok()?;
    let row = parts.next()?.parse().ok()?;
    let source = parts.next()?.to_string();
    Some((source, row, col))
}

/// Read the tiles of one split directory, sorted by tile id.
pub fn read_tiles(dir: &Path) -> Result<Vec<TileSample>> {
    let images = png_stems(&dir.join("img"))?;
    let masks = png_stems(&dir.join("msk"))?;
    let unpaired: Vec<String> = images
        .keys()
        .filter(|k| !masks.contains_key(*k))
        .chain(masks.keys().filter(|k| !images.contains_key(*k)))
        .cloned()
        .collect();
    if !unpaired.is_empty() {
        return Err(Error::Unpaired(unpaired));
    }
    images
        .iter()
        .map(|(id, path)| {
            let (source, row, col) = parse_tile_id(id).ok_or_else(|| Error::Format {
                path: path.clone(),
                reason: "tile file names must look like <source>_<row>_<col>.png".into(),
            })?;
            let image = open_rgb(path)?;
            let mask = open_mask(&masks[id])?;
            if (image.height() as usize, image.width() as usize) != mask.dims() {
                return Err(Error::InvalidRaster(format!("{id}: image and mask sizes differ")));
            }
            Ok(TileSample::new(source, (row, col), image, mask))
        })
        .collect()
}

/// Load `<root>/{train,val,test}`; absent split directories load as empty.
pub fn load_dataset(root: &Path) -> Result<DatasetSplit> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let seed = csv::Reader::from_path(root.join(MANIFEST_FILE))
        .ok()
        .and_then(|mut r| r.deserialize::<ManifestRecord>().next())
        .and_then(|r| r.ok())
        .map_or(0, |r| r.seed);
    Ok(DatasetSplit {
        train: read_tiles(&root.join("train"))?,
        val: read_tiles(&root.join("val"))?,
        test: read_tiles(&root.join("test"))?,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::{split, synth_corpus, tile};

    #[test]
    fn tile_ids_parse_from_the_right() {
        assert_eq!(parse_tile_id("a_b_32_64"), Some(("a_b".into(), 32, 64)));
        assert_eq!(parse_tile_id("nope"), None);
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = synth_corpus(2, 64, 4).unwrap();
        let tiles: Vec<_> = pairs.iter().flat_map(|p| tile(p, 32, 32).unwrap()).collect();
        let s = split(tiles, (0.5, 0.25, 0.25), 8).unwrap();
        let records = write_dataset(&s, dir.path()).unwrap();
        assert_eq!(records.len(), 8);
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.seed, 8);
        let sorted = |mut v: Vec<TileSample>| {
            v.sort_by_key(|t| t.tile_id());
            v
        };
        assert_eq!(sorted(s.train.clone()), back.train);
        assert_eq!(sorted(s.test.clone()), back.test);
    }

    #[test]
    fn unpaired_rasters_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = synth_corpus(2, 32, 4).unwrap();
        write_raster_dir(&pairs, dir.path()).unwrap();
        fs::remove_file(dir.path().join("msk").join("syn0001.png")).unwrap();
        match read_raster_dir(dir.path()) {
            Err(Error::Unpaired(ids)) => assert_eq!(ids, vec!["syn0001".to_string()]),
            other => panic!("expected unpaired error, got {other:?}"),
        }
    }
}
