//! Micron-calibrated tile cutting, empty-tile filtering and keypoint patch
//! sampling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RgbImage;

/// Slack for floating-point µm/px products that should land on an integer
/// tile count (e.g. 395 px at 100/395 µm/px).
const GRID_EPS: f64 = 1e-9;

/// A fixed field-of-view patch cut from a larger raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub tile_id: String,
    pub slide_id: String,
    pub image: RgbImage,
    /// Micrometers per pixel of `image` (after resizing).
    pub microns_per_pixel: f64,
    /// Top-left corner in source raster pixels.
    pub origin: (u32, u32),
}

impl Tile {
    pub fn new(
        tile_id: impl Into<String>,
        slide_id: impl Into<String>,
        image: RgbImage,
        microns_per_pixel: f64,
        origin: (u32, u32),
    ) -> Result<Self> {
        if !(microns_per_pixel.is_finite() && microns_per_pixel > 0.0) {
            return Err(Error::domain(format!(
                "microns_per_pixel must be positive, got {microns_per_pixel}"
            )));
        }
        Ok(Self {
            tile_id: tile_id.into(),
            slide_id: slide_id.into(),
            image,
            microns_per_pixel,
            origin,
        })
    }

    /// Edge length of the tile in micrometers.
    pub fn field_of_view(&self) -> f64 {
        self.image.width() as f64 * self.microns_per_pixel
    }
}

/// Grid shape `(columns, rows)` of full tiles that fit into a raster.
pub fn tile_grid(width: u32, height: u32, microns_per_pixel: f64, tile_fov: f64) -> (u32, u32) {
    let fit = |px: u32| (px as f64 * microns_per_pixel / tile_fov + GRID_EPS).floor() as u32;
    (fit(width), fit(height))
}

/// Cuts a raster into a non-overlapping grid of `tile_fov` µm tiles, each
/// bilinearly resized to `output_size` px square. Partial edge tiles are
/// dropped. Tiles are returned row-major by origin.
pub fn cut_tiles(
    raster: &RgbImage,
    slide_id: &str,
    microns_per_pixel: f64,
    tile_fov: f64,
    output_size: u32,
) -> Result<Vec<Tile>> {
    if !(microns_per_pixel.is_finite() && microns_per_pixel > 0.0) {
        return Err(Error::domain("microns_per_pixel must be positive"));
    }
    if !(tile_fov.is_finite() && tile_fov > 0.0) {
        return Err(Error::domain("tile field of view must be positive"));
    }
    if output_size == 0 {
        return Err(Error::domain("output size must be positive"));
    }
    let window = tile_fov / microns_per_pixel;
    if window < 1.0 - GRID_EPS {
        return Err(Error::domain(format!(
            "tile field of view {tile_fov} µm is smaller than one source pixel ({microns_per_pixel} µm)"
        )));
    }

    let (cols, rows) = tile_grid(raster.width(), raster.height(), microns_per_pixel, tile_fov);
    let out_mpp = tile_fov / output_size as f64;
    (0..rows * cols)
        .into_par_iter()
        .map(|i| {
            let (row, col) = (i / cols, i % cols);
            let x0 = col as f64 * window;
            let y0 = row as f64 * window;
            let image = resample_window(raster, x0, y0, window, output_size);
            Tile::new(
                format!("{slide_id}_r{row:03}_c{col:03}"),
                slide_id,
                image,
                out_mpp,
                (x0.floor() as u32, y0.floor() as u32),
            )
        })
        .collect()
}

/// Bilinear resampling of the square source window starting at `(x0, y0)`
/// with side `window` into an `out` x `out` image, pixel-center aligned.
fn resample_window(src: &RgbImage, x0: f64, y0: f64, window: f64, out: u32) -> RgbImage {
    let scale = window / out as f64;
    let max_x = (src.width() - 1) as f64;
    let max_y = (src.height() - 1) as f64;
    let coords = |origin: f64, max: f64| -> Vec<(u32, u32, f64)> {
        (0..out)
            .map(|o| {
                let s = (origin + (o as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
                let lo = s.floor();
                let hi = (lo + 1.0).min(max);
                (lo as u32, hi as u32, s - lo)
            })
            .collect()
    };
    let xs = coords(x0, max_x);
    let ys = coords(y0, max_y);

    let mut data = Vec::with_capacity(out as usize * out as usize * 3);
    for &(ya, yb, fy) in &ys {
        for &(xa, xb, fx) in &xs {
            let p00 = src.pixel(xa, ya);
            let p10 = src.pixel(xb, ya);
            let p01 = src.pixel(xa, yb);
            let p11 = src.pixel(xb, yb);
            for c in 0..3 {
                let top = p00[c] as f64 + (p10[c] as f64 - p00[c] as f64) * fx;
                let bottom = p01[c] as f64 + (p11[c] as f64 - p01[c] as f64) * fx;
                let v = top + (bottom - top) * fy;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage::new(out, out, data).expect("output size checked by caller")
}

/// Mean/std thresholds that flag background or blank tiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmptyTileFilter {
    /// Any channel mean below this marks the tile empty.
    pub mean_low: f64,
    /// Any channel mean above this marks the tile empty.
    pub mean_high: f64,
    /// Grayscale `(R+G+B)/3` standard deviation below this marks the tile empty.
    pub std_min: f64,
}

impl Default for EmptyTileFilter {
    fn default() -> Self {
        Self {
            mean_low: 20.0,
            mean_high: 230.0,
            std_min: 5.0,
        }
    }
}

/// Why a tile was judged empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmptyReason {
    MeanBelow,
    MeanAbove,
    LowStd,
}

impl std::fmt::Display for EmptyReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmptyReason::MeanBelow => "mean<low",
            EmptyReason::MeanAbove => "mean>high",
            EmptyReason::LowStd => "std<min",
        })
    }
}

/// Per-channel means and grayscale standard deviation of an image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileStats {
    pub channel_mean: [f64; 3],
    pub gray_std: f64,
}

pub fn tile_stats(image: &RgbImage) -> TileStats {
    let n = image.width() as f64 * image.height() as f64;
    let mut sums = [0u64; 3];
    let mut gray_sum = 0.0;
    let mut gray_sq = 0.0;
    for px in image.as_raw().chunks_exact(3) {
        let mut s = 0u32;
        for c in 0..3 {
            sums[c] += px[c] as u64;
            s += px[c] as u32;
        }
        let g = s as f64 / 3.0;
        gray_sum += g;
        gray_sq += g * g;
    }
    let gray_mean = gray_sum / n;
    let var = (gray_sq / n - gray_mean * gray_mean).max(0.0);
    TileStats {
        channel_mean: sums.map(|s| s as f64 / n),
        gray_std: var.sqrt(),
    }
}

impl EmptyTileFilter {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_low <= self.mean_high) {
            return Err(Error::domain("empty filter mean bounds must satisfy low <= high"));
        }
        if !(self.std_min >= 0.0) {
            return Err(Error::domain("empty filter std_min must be >= 0"));
        }
        Ok(())
    }

    /// First failing criterion, or `None` when the tile holds content.
    pub fn reason(&self, image: &RgbImage) -> Option<EmptyReason> {
        let stats = tile_stats(image);
        if stats.channel_mean.iter().any(|&m| m < self.mean_low) {
            Some(EmptyReason::MeanBelow)
        } else if stats.channel_mean.iter().any(|&m| m > self.mean_high) {
            Some(EmptyReason::MeanAbove)
        } else if stats.gray_std < self.std_min {
            Some(EmptyReason::LowStd)
        } else {
            None
        }
    }
}

pub fn is_empty_tile(tile: &Tile, filter: &EmptyTileFilter) -> bool {
    filter.reason(&tile.image).is_some()
}

/// Integer pixel addressed by a real-valued keypoint position.
pub(crate) fn pixel_of(image: &RgbImage, center: (f64, f64)) -> Result<(u32, u32)> {
    let (x, y) = center;
    let (w, h) = (image.width() as f64, image.height() as f64);
    if !(x >= 0.0 && x < w && y >= 0.0 && y < h) {
        return Err(Error::domain(format!(
            "point ({x}, {y}) outside {}x{} image",
            image.width(),
            image.height()
        )));
    }
    let px = (x.round() as u32).min(image.width() - 1);
    let py = (y.round() as u32).min(image.height() - 1);
    Ok((px, py))
}

/// Per-channel mean over the square of half-side `half_side` centred on the
/// pixel nearest `center`, clipped to the image.
pub fn patch_mean(image: &RgbImage, center: (f64, f64), half_side: u32) -> Result<[f64; 3]> {
    let (cx, cy) = pixel_of(image, center)?;
    let x0 = cx.saturating_sub(half_side);
    let y0 = cy.saturating_sub(half_side);
    let x1 = cx.saturating_add(half_side).min(image.width() - 1);
    let y1 = cy.saturating_add(half_side).min(image.height() - 1);
    let mut sums = [0u64; 3];
    for y in y0..=y1 {
        for x in x0..=x1 {
            let p = image.pixel(x, y);
            for c in 0..3 {
                sums[c] += p[c] as u64;
            }
        }
    }
    let n = ((x1 - x0 + 1) as u64 * (y1 - y0 + 1) as u64) as f64;
    Ok(sums.map(|s| s as f64 / n))
}

/// Default sampling half-side: `floor(factor * radius)`.
pub fn default_half_side(nucleus_radius_px: f64, factor: f64) -> u32 {
    (factor * nucleus_radius_px).floor().max(0.0) as u32
}
