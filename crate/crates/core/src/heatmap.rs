//! Per-class probability rasters, the `HMF1` binary container, and Huber
//! loss between heatmaps.
//!
//! `HMF1` layout (all little-endian):
//!
//! ```text
//! b"HMF1" | height: u32 | width: u32 | classes: u32 | f32 * height*width*classes
//! ```
//!
//! Samples are row-major with the class index varying fastest. Class 0 is
//! stroma, class 1 epithelium.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::keypoints::Compartment;

const MAGIC: &[u8; 4] = b"HMF1";

/// Probability raster with one plane per compartment class.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    width: u32,
    height: u32,
    classes: Vec<Compartment>,
    planes: Vec<Vec<f32>>,
}

impl Heatmap {
    pub fn zeros(width: u32, height: u32, classes: Vec<Compartment>) -> Result<Self> {
        let n = width as usize * height as usize;
        let planes = vec![vec![0.0; n]; classes.len()];
        Self::from_planes(width, height, classes, planes)
    }

    /// Builds a heatmap from class-major planes, validating every sample.
    pub fn from_planes(
        width: u32,
        height: u32,
        classes: Vec<Compartment>,
        planes: Vec<Vec<f32>>,
    ) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::domain("heatmap needs at least one class"));
        }
        if planes.len() != classes.len() {
            return Err(Error::domain(format!(
                "{} planes for {} classes",
                planes.len(),
                classes.len()
            )));
        }
        for (i, c) in classes.iter().enumerate() {
            if classes[..i].contains(c) {
                return Err(Error::domain(format!("duplicate heatmap class {c}")));
            }
        }
        let n = width as usize * height as usize;
        for (plane, class) in planes.iter().zip(&classes) {
            if plane.len() != n {
                return Err(Error::domain(format!(
                    "{class} plane has {} samples, expected {n}",
                    plane.len()
                )));
            }
            if let Some(bad) = plane.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
                return Err(Error::Validation(format!(
                    "{class} plane holds {bad}, outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            classes,
            planes,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn classes(&self) -> &[Compartment] {
        &self.classes
    }

    pub fn plane(&self, index: usize) -> &[f32] {
        &self.planes[index]
    }

    pub fn plane_for(&self, class: Compartment) -> Option<&[f32]> {
        self.classes
            .iter()
            .position(|&c| c == class)
            .map(|i| self.planes[i].as_slice())
    }

    #[inline]
    pub fn get(&self, class_index: usize, x: u32, y: u32) -> f32 {
        self.planes[class_index][y as usize * self.width as usize + x as usize]
    }

    pub fn same_shape(&self, other: &Heatmap) -> bool {
        self.width == other.width && self.height == other.height && self.classes == other.classes
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.width as usize * self.height as usize;
        let mut out = Vec::with_capacity(16 + n * self.classes.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&(self.classes.len() as u32).to_le_bytes());
        for i in 0..n {
            for plane in &self.planes {
                out.extend_from_slice(&plane[i].to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let parse_err = |field: &str, message: String| Error::Parse {
            path: None,
            line: 0,
            field: field.into(),
            message,
        };
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(parse_err("magic", "missing HMF1 header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let (height, width, classes) = (word(4), word(8), word(12));
        let classes = Compartment::from_channel_count(classes as usize)
            .ok_or_else(|| parse_err("classes", format!("unsupported class count {classes}")))?;
        let n = width as usize * height as usize;
        let expected = 16 + n * classes.len() * 4;
        if bytes.len() != expected {
            return Err(parse_err(
                "data",
                format!("expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        let mut planes = vec![Vec::with_capacity(n); classes.len()];
        for (k, chunk) in bytes[16..].chunks_exact(4).enumerate() {
            planes[k % classes.len()].push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        Self::from_planes(width, height, classes, planes)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Parse {
                line,
                field,
                message,
                ..
            } => Error::Parse {
                path: Some(path.to_path_buf()),
                line,
                field,
                message,
            },
            other => other,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&self.to_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Elementwise Huber loss of a residual.
#[inline]
pub fn huber(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a < delta {
        0.5 * a * a
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Mean Huber loss of residuals `r = target - predicted`; 0 for no samples.
///
/// Unlike heatmap samples, the residuals themselves are unbounded.
pub fn mean_huber(residuals: impl IntoIterator<Item = f64>, delta: f64) -> Result<f64> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::domain(format!("huber delta must be positive, got {delta}")));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for r in residuals {
        total += huber(r, delta);
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Mean Huber loss over every pixel and class.
pub fn huber_loss(predicted: &Heatmap, target: &Heatmap, delta: f64) -> Result<f64> {
    if !predicted.same_shape(target) {
        return Err(Error::domain(format!(
            "heatmap shapes differ: {}x{}x{} vs {}x{}x{}",
            predicted.width,
            predicted.height,
            predicted.classes.len(),
            target.width,
            target.height,
            target.classes.len()
        )));
    }
    let residuals = predicted
        .planes
        .iter()
        .zip(&target.planes)
        .flat_map(|(p, t)| p.iter().zip(t).map(|(&a, &b)| b as f64 - a as f64));
    mean_huber(residuals, delta)
}
