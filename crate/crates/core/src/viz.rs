//! Prediction quality maps, outline extraction and figure composition.

use std::collections::VecDeque;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use segtensor::Scalar;

use crate::datakit::TileSample;
use crate::grid::{BinaryMap, EdgeMap};
use crate::trainer::THRESHOLD;
use crate::zoo::{boundary_target, predict_masks, Segmenter};
use crate::{Error, Result};

pub type RgbCanvas = RgbImage;

pub const TP_COLOR: Rgb<u8> = Rgb([0, 255, 0]);
pub const FP_COLOR: Rgb<u8> = Rgb([255, 0, 0]);
pub const FN_COLOR: Rgb<u8> = Rgb([0, 0, 255]);
pub const TN_COLOR: Rgb<u8> = Rgb([255, 255, 255]);
pub const EDGE_COLOR: Rgb<u8> = Rgb([255, 255, 255]);
pub const SEPARATOR: u32 = 2;

pub const CANNY_SIGMA: f64 = 1.4;
pub const CANNY_LOW: f64 = 50.0;
pub const CANNY_HIGH: f64 = 100.0;

/// Per-pixel outcome colors: TP green, FP red, FN blue, TN white.
pub fn render_confusion(pred: &BinaryMap, gt: &BinaryMap) -> Result<RgbCanvas> {
    if pred.dims() != gt.dims() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let (h, w) = pred.dims();
    Ok(RgbImage::from_fn(w as u32, h as u32, |c, r| {
        match (pred.get(r as usize, c as usize), gt.get(r as usize, c as usize)) {
            (true, true) => TP_COLOR,
            (true, false) => FP_COLOR,
            (false, true) => FN_COLOR,
            (false, false) => TN_COLOR,
        }
    }))
}

/// ITU-R 601 luma, rounded to nearest.
pub fn to_gray(img: &RgbImage) -> GrayImage {
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let [r, g, b] = img.get_pixel(x, y).0;
        let y = (299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000;
        Luma([y as u8])
    })
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable convolution with edge replication.
fn blur(src: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * src[y * w + clamp(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * tmp[clamp(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Canny edge detector: Gaussian blur, Sobel gradients, non-maximum
/// suppression along the quantized gradient direction, and hysteresis
/// linking weak pixels (8-connected) to strong ones.
///
/// Intensities are measured from the image minimum, so adding a constant
/// to every pixel leaves the result unchanged.
pub fn canny(gray: &GrayImage, low: f64, high: f64, sigma: f64) -> Result<EdgeMap> {
    if !(low > 0.0 && high >= low && sigma > 0.0) {
        return Err(Error::InvalidThresholds(format!(
            "need high >= low > 0 and sigma > 0, got low {low}, high {high}, sigma {sigma}"
        )));
    }
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let floor = gray.pixels().map(|p| p[0]).min().unwrap_or(0);
    let src: Vec<f64> = gray.pixels().map(|p| f64::from(p[0] - floor)).collect();
    let s = blur(&src, h, w, &gaussian_kernel(sigma));

    let at = |y: isize, x: isize| s[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut mag = vec![0.0; h * w];
    let mut dir = vec![0u8; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            let i = y as usize * w + x as usize;
            mag[i] = gx.hypot(gy);
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            dir[i] = match angle {
                a if !(22.5..157.5).contains(&a) => 0,
                a if a < 67.5 => 1,
                a if a < 112.5 => 2,
                _ => 3,
            };
        }
    }

    // Ties go to the pixel on the negative side of the gradient, which keeps
    // plateaus one pixel wide.
    let m = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut thin = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let v = mag[i];
            if v == 0.0 {
                continue;
            }
            let (dy, dx) = match dir[i] {
                0 => (0, 1),
                1 => (1, 1),
                2 => (1, 0),
                _ => (1, -1),
            };
            if v > m(y - dy, x - dx) && v >= m(y + dy, x + dx) {
                thin[i] = v;
            }
        }
    }

    let mut edges = BinaryMap::zeros(h, w);
    let mut queue: VecDeque<(usize, usize)> = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if thin[y * w + x] >= high {
                edges.set(y, x, true);
                queue.push_back((y, x));
            }
        }
    }
    while let Some((y, x)) = queue.pop_front() {
        for ny in y.saturating_sub(1)..(y + 2).min(h) {
            for nx in x.saturating_sub(1)..(x + 2).min(w) {
                if !edges.get(ny, nx) && thin[ny * w + nx] >= low {
                    edges.set(ny, nx, true);
                    queue.push_back((ny, nx));
                }
            }
        }
    }
    Ok(edges)
}

/// Canny with the default parameters on the luma of `img`.
pub fn image_edges(img: &RgbImage) -> EdgeMap {
    canny(&to_gray(img), CANNY_LOW, CANNY_HIGH, CANNY_SIGMA).expect("default thresholds are valid")
}

/// Same inner-boundary rule as the boundary training target.
pub fn mask_outline(mask: &BinaryMap) -> EdgeMap {
    boundary_target(mask)
}

/// White edges on black.
pub fn render_edges(edges: &EdgeMap) -> RgbCanvas {
    let (h, w) = edges.dims();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        if edges.get(y as usize, x as usize) {
            EDGE_COLOR
        } else {
            Rgb([0, 0, 0])
        }
    })
}

/// `img` with the outline of `mask` painted in `color`.
pub fn overlay_outline(img: &RgbImage, mask: &BinaryMap, color: Rgb<u8>) -> RgbCanvas {
    let outline = mask_outline(mask);
    let mut out = img.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        if outline.get(y as usize, x as usize) {
            *px = color;
        }
    }
    out
}

/// Row-major grid of equally sized cells with black separators.
pub fn grid(rows: &[Vec<RgbCanvas>]) -> Result<RgbCanvas> {
    let first = rows
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| Error::EmptyInput("grid needs at least one cell".into()))?;
    let (cw, ch) = first.dimensions();
    let cols = rows[0].len() as u32;
    for row in rows {
        if row.len() as u32 != cols || row.iter().any(|c| c.dimensions() != (cw, ch)) {
            return Err(Error::ShapeMismatch(
                "grid cells must share one size and rows one length".into(),
            ));
        }
    }
    let n_rows = rows.len() as u32;
    let width = cols * cw + (cols - 1) * SEPARATOR;
    let height = n_rows * ch + (n_rows - 1) * SEPARATOR;
    let mut canvas = RgbImage::new(width, height);
    for (r, row) in rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let (ox, oy) = (c as u32 * (cw + SEPARATOR), r as u32 * (ch + SEPARATOR));
            for (x, y, px) in cell.enumerate_pixels() {
                canvas.put_pixel(ox + x, oy + y, *px);
            }
        }
    }
    Ok(canvas)
}

/// Four rows per sample column: image, Canny edges of the image, segmentation
/// quality map, outline quality map.
pub fn compose_single<T: Scalar>(samples: &[&TileSample], model: &dyn Segmenter<T>) -> Result<RgbCanvas> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to visualize".into()));
    }
    let preds = predict_masks(model, samples, T::from_f64_lossy(THRESHOLD), 8)?;
    let mut rows = vec![Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for (s, pred) in samples.iter().zip(&preds) {
        rows[0].push(s.image.clone());
        rows[1].push(render_edges(&image_edges(&s.image)));
        rows[2].push(render_confusion(pred, &s.mask)?);
        rows[3].push(render_confusion(&mask_outline(pred), &mask_outline(&s.mask))?);
    }
    grid(&rows)
}

/// A header row (image with the ground-truth outline in green) followed by
/// one segmentation quality row per model, in the order given.
pub fn compose_comparison<T: Scalar>(samples: &[&TileSample], models: &[&dyn Segmenter<T>]) -> Result<RgbCanvas> {
    if models.len() < 2 {
        return Err(Error::NeedMultipleModels(models.len()));
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to visualize".into()));
    }
    let mut rows = vec![samples
        .iter()
        .map(|s| overlay_outline(&s.image, &s.mask, TP_COLOR))
        .collect::<Vec<_>>()];
    for model in models {
        let preds = predict_masks(*model, samples, T::from_f64_lossy(THRESHOLD), 8)?;
        rows.push(
            samples
                .iter()
                .zip(&preds)
                .map(|(s, p)| render_confusion(p, &s.mask))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    grid(&rows)
}

/// `k` distinct indices below `len` (all of them when `k >= len`), chosen by
/// `seed` and returned in ascending order.
pub fn pick_samples(len: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, len, k.min(len)).into_vec();
    picked.sort_unstable();
    picked
}

pub fn save_canvas(canvas: &RgbCanvas, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    canvas.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_is_601_luma() {
        let img = RgbImage::from_pixel(1, 1, Rgb([100, 50, 200]));
        // 0.299*100 + 0.587*50 + 0.114*200 = 82.15
        assert_eq!(to_gray(&img).get_pixel(0, 0)[0], 82);
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(1.4);
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k[0], k[10]);
    }

    #[test]
    fn grid_arithmetic() {
        let cell = RgbImage::new(5, 3);
        let g = grid(&[vec![cell.clone(), cell.clone()], vec![cell.clone(), cell]]).unwrap();
        assert_eq!(g.dimensions(), (2 * 5 + 2, 2 * 3 + 2));
        assert_eq!(g.get_pixel(5, 0), &Rgb([0, 0, 0]));
    }

    #[test]
    fn bad_thresholds() {
        let g = GrayImage::new(4, 4);
        assert!(matches!(canny(&g, 0.0, 10.0, 1.0), Err(Error::InvalidThresholds(_))));
        assert!(matches!(canny(&g, 20.0, 10.0, 1.0), Err(Error::InvalidThresholds(_))));
        assert!(matches!(canny(&g, 5.0, 10.0, 0.0), Err(Error::InvalidThresholds(_))));
    }
}
