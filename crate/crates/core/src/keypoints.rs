//! Nucleus keypoints: extraction of local maxima from heatmaps and rendering
//! of Gaussian target heatmaps.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::Heatmap;

/// Tissue compartment a nucleus belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Compartment {
    Stroma,
    Epithelium,
}

impl Compartment {
    pub const ALL: [Compartment; 2] = [Compartment::Stroma, Compartment::Epithelium];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Compartment::Stroma => "stroma",
            Compartment::Epithelium => "epithelium",
        }
    }

    /// Class list implied by a heatmap channel count (channel 0 is stroma).
    pub fn from_channel_count(n: usize) -> Option<Vec<Compartment>> {
        (1..=Self::ALL.len()).contains(&n).then(|| Self::ALL[..n].to_vec())
    }
}

impl fmt::Display for Compartment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Compartment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "stroma" => Ok(Compartment::Stroma),
            "epithelium" => Ok(Compartment::Epithelium),
            other => Err(format!("unknown compartment `{other}`")),
        }
    }
}

/// A predicted or annotated nucleus center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub class: Compartment,
    pub confidence: f64,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, class: Compartment, confidence: f64) -> Self {
        Self {
            x,
            y,
            class,
            confidence,
        }
    }

    pub fn distance_sq(&self, other: &Keypoint) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        dx * dx + dy * dy
    }
}

/// Descending confidence, ties by `(y, x)` ascending.
pub(crate) fn by_confidence_desc(a: &Keypoint, b: &Keypoint) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.y.total_cmp(&b.y))
        .then(a.x.total_cmp(&b.x))
}

/// Parameters of the heatmap-to-keypoint extractor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractorParams {
    /// Minimum heatmap value of an accepted peak.
    pub confidence_threshold: f64,
    /// Peaks of one class closer than or equal to this (px) are suppressed.
    pub min_distance: f64,
    /// Side of the square max-pooling window; odd.
    pub pool_size: u32,
}

impl ExtractorParams {
    pub fn with_nucleus_radius(nucleus_radius_px: f64) -> Self {
        Self {
            confidence_threshold: 0.5,
            min_distance: nucleus_radius_px,
            pool_size: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::domain(format!(
                "confidence threshold {} outside [0, 1]",
                self.confidence_threshold
            )));
        }
        if !(self.min_distance >= 0.0 && self.min_distance.is_finite()) {
            return Err(Error::domain("min_distance must be a finite value >= 0"));
        }
        if self.pool_size == 0 || self.pool_size % 2 == 0 {
            return Err(Error::domain(format!(
                "pool size must be odd and >= 1, got {}",
                self.pool_size
            )));
        }
        Ok(())
    }
}

/// Extracts nucleus keypoints from every class channel of a heatmap.
///
/// A pixel is a peak candidate when it reaches the threshold and is the
/// maximum of its `pool_size` window (equal values resolve to the
/// lexicographically first `(y, x)`). Candidates are then accepted greedily
/// by descending value, dropping any within `min_distance` of an already
/// accepted peak of the same class.
pub fn extract_keypoints(heatmap: &Heatmap, params: &ExtractorParams) -> Result<Vec<Keypoint>> {
    params.validate()?;
    let per_class: Vec<Vec<Keypoint>> = heatmap
        .classes()
        .par_iter()
        .enumerate()
        .map(|(ci, &class)| {
            let candidates = pooled_maxima(heatmap, ci, class, params);
            suppress_close(candidates, params.min_distance)
        })
        .collect();
    Ok(per_class.into_iter().flatten().collect())
}

fn pooled_maxima(
    heatmap: &Heatmap,
    class_index: usize,
    class: Compartment,
    params: &ExtractorParams,
) -> Vec<Keypoint> {
    let (w, h) = (heatmap.width(), heatmap.height());
    let half = params.pool_size / 2;
    let plane = heatmap.plane(class_index);
    let threshold = params.confidence_threshold;
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = plane[y as usize * w as usize + x as usize];
            if (v as f64) < threshold {
                continue;
            }
            if is_window_max(plane, w, h, x, y, half, v) {
                out.push(Keypoint::new(x as f64, y as f64, class, v as f64));
            }
        }
    }
    out
}

/// True if no neighbor in the clipped window beats `(x, y)`: a neighbor beats
/// it with a larger value, or an equal value at an earlier `(y, x)`.
#[inline]
fn is_window_max(plane: &[f32], w: u32, h: u32, x: u32, y: u32, half: u32, v: f32) -> bool {
    let y0 = y.saturating_sub(half);
    let y1 = (y + half).min(h - 1);
    let x0 = x.saturating_sub(half);
    let x1 = (x + half).min(w - 1);
    for ny in y0..=y1 {
        let row = &plane[ny as usize * w as usize..(ny as usize + 1) * w as usize];
        for nx in x0..=x1 {
            let n = row[nx as usize];
            if n > v || (n == v && (ny, nx) < (y, x)) {
                return false;
            }
        }
    }
    true
}

fn suppress_close(mut candidates: Vec<Keypoint>, min_distance: f64) -> Vec<Keypoint> {
    candidates.sort_by(by_confidence_desc);
    if min_distance <= 0.0 {
        return candidates;
    }
    // bucket accepted peaks on a grid with cell side = min_distance
    let cell = min_distance;
    let key = |k: &Keypoint| ((k.x / cell).floor() as i64, (k.y / cell).floor() as i64);
    let mut grid: std::collections::HashMap<(i64, i64), Vec<usize>> = Default::default();
    let limit = min_distance * min_distance;
    let mut accepted: Vec<Keypoint> = Vec::new();
    for cand in candidates {
        let (gx, gy) = key(&cand);
        let blocked = (-1..=1).any(|dy| {
            (-1..=1).any(|dx| {
                grid.get(&(gx + dx, gy + dy)).is_some_and(|ids| {
                    ids.iter().any(|&i| accepted[i].distance_sq(&cand) <= limit)
                })
            })
        });
        if !blocked {
            grid.entry((gx, gy)).or_default().push(accepted.len());
            accepted.push(cand);
        }
    }
    accepted
}

/// Exponents past this make `exp(-e)` round to zero in `f32`, so rendering
/// can skip pixels beyond the corresponding radius without changing output.
const RENDER_EXPONENT_CUTOFF: f64 = 104.0;

/// Renders a Gaussian target heatmap: each class channel is the pixel-wise
/// maximum over that class's keypoints of `confidence * exp(-d² / 2σ²)`.
pub fn render_heatmap(
    keypoints: &[Keypoint],
    width: u32,
    height: u32,
    classes: &[Compartment],
    sigma: f64,
) -> Result<Heatmap> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
    }
    let mut planes = vec![vec![0f32; width as usize * height as usize]; classes.len()];
    let radius = (sigma * (2.0 * RENDER_EXPONENT_CUTOFF).sqrt()).ceil() + 1.0;
    let inv = 1.0 / (2.0 * sigma * sigma);
    for kp in keypoints {
        if !(kp.x >= 0.0 && kp.x < width as f64 && kp.y >= 0.0 && kp.y < height as f64) {
            return Err(Error::domain(format!(
                "keypoint ({}, {}) outside {width}x{height} heatmap",
                kp.x, kp.y
            )));
        }
        if !(0.0..=1.0).contains(&kp.confidence) {
            return Err(Error::domain(format!(
                "keypoint confidence {} outside [0, 1]",
                kp.confidence
            )));
        }
        let ci = classes.iter().position(|&c| c == kp.class).ok_or_else(|| {
            Error::domain(format!("keypoint class {} not among heatmap classes", kp.class))
        })?;
        let plane = &mut planes[ci];
        let x0 = (kp.x - radius).floor().max(0.0) as u32;
        let x1 = ((kp.x + radius).ceil() as u32).min(width - 1);
        let y0 = (kp.y - radius).floor().max(0.0) as u32;
        let y1 = ((kp.y + radius).ceil() as u32).min(height - 1);
        for py in y0..=y1 {
            let dy = py as f64 - kp.y;
            for px in x0..=x1 {
                let dx = px as f64 - kp.x;
                let v = (kp.confidence * (-(dx * dx + dy * dy) * inv).exp()) as f32;
                let slot = &mut plane[py as usize * width as usize + px as usize];
                if v > *slot {
                    *slot = v;
                }
            }
        }
    }
    Heatmap::from_planes(width, height, classes.to_vec(), planes)
}
