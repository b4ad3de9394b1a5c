//! Hexcone RGB <-> HSV conversion.
//!
//! Hue is measured in degrees on `[0, 360)`; saturation and value share the
//! 8-bit `[0, 255]` scale of the input channels so that Value thresholds are
//! directly comparable with channel intensities.

use serde::{Deserialize, Serialize};

/// A pixel (or patch mean) in HSV space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsvPixel {
    /// Degrees, `[0, 360)`. Achromatic colors have hue 0.
    pub hue: f64,
    /// `[0, 255]`.
    pub saturation: f64,
    /// Brightness, `[0, 255]`. Darker stain means lower value.
    pub value: f64,
}

/// Converts a real-valued RGB triple (channels on `[0, 255]`) to HSV.
pub fn rgb_to_hsv(rgb: [f64; 3]) -> HsvPixel {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;

    let saturation = if max > 0.0 { delta / max * 255.0 } else { 0.0 };
    let hue = if delta <= 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };

    HsvPixel {
        hue: normalize_degrees(hue),
        saturation,
        value: max,
    }
}

/// Convenience wrapper for 8-bit pixels.
pub fn rgb8_to_hsv(rgb: [u8; 3]) -> HsvPixel {
    rgb_to_hsv([rgb[0] as f64, rgb[1] as f64, rgb[2] as f64])
}

/// Inverse of [`rgb_to_hsv`], returning real-valued channels on `[0, 255]`.
pub fn hsv_to_rgb(hsv: HsvPixel) -> [f64; 3] {
    let v = hsv.value;
    let chroma = v * hsv.saturation / 255.0;
    let sector = normalize_degrees(hsv.hue) / 60.0;
    let x = chroma * (1.0 - (sector % 2.0 - 1.0).abs());
    let (r, g, b) = match sector as u32 {
        0 => (chroma, x, 0.0),
        1 => (x, chroma, 0.0),
        2 => (0.0, chroma, x),
        3 => (0.0, x, chroma),
        4 => (x, 0.0, chroma),
        _ => (chroma, 0.0, x),
    };
    let m = v - chroma;
    [r + m, g + m, b + m]
}

/// [`hsv_to_rgb`] rounded to the nearest 8-bit value.
pub fn hsv_to_rgb8(hsv: HsvPixel) -> [u8; 3] {
    hsv_to_rgb(hsv).map(|c| c.round().clamp(0.0, 255.0) as u8)
}

/// Wraps an angle into `[0, 360)`.
pub fn normalize_degrees(deg: f64) -> f64 {
    let wrapped = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if wrapped >= 360.0 {
        0.0
    } else {
        wrapped
    }
}

/// Signed shortest angular difference `to - from`, in `(-180, 180]`.
pub fn signed_arc(from: f64, to: f64) -> f64 {
    let d = normalize_degrees(to - from);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}
