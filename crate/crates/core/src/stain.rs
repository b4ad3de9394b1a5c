//! Blue/brown separation on the hue circle and brown intensity grading on
//! the Value channel.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::color::{normalize_degrees, rgb_to_hsv, signed_arc, HsvPixel};
use crate::error::{Error, Result};
use crate::keypoints::Keypoint;
use crate::raster::RgbImage;
use crate::tiling::patch_mean;

/// Staining intensity of one nucleus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StainClass {
    None,
    Weak,
    Moderate,
    Strong,
}

impl StainClass {
    pub const ALL: [StainClass; 4] = [
        StainClass::None,
        StainClass::Weak,
        StainClass::Moderate,
        StainClass::Strong,
    ];

    /// H-score weight: none 0, weak 1, moderate 2, strong 3.
    pub fn weight(self) -> u64 {
        self as u64
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StainClass::None => "none",
            StainClass::Weak => "weak",
            StainClass::Moderate => "moderate",
            StainClass::Strong => "strong",
        }
    }

    /// One step stronger, saturating at strong.
    pub fn upgraded(self) -> StainClass {
        match self {
            StainClass::None => StainClass::Weak,
            StainClass::Weak => StainClass::Moderate,
            _ => StainClass::Strong,
        }
    }
}

impl fmt::Display for StainClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StainClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        StainClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown stain label `{s}`"))
    }
}

/// Per-annotator classification thresholds.
///
/// The hue circle is cut by the diameter through `hue_split_deg`; the half
/// containing `brown_hue_deg` is the stained side. Stained nuclei are graded
/// on mean Value: `V < value_left` strong, `value_left <= V < value_right`
/// moderate, otherwise weak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StainProfile {
    pub annotator_id: String,
    pub hue_split_deg: f64,
    pub value_left: f64,
    pub value_right: f64,
    pub nucleus_half_side_px: u32,
    /// RFC 3339 creation timestamp.
    pub created_utc: String,
    /// Calibration objective at the chosen thresholds, if calibrated.
    pub objective: Option<f64>,
    /// Reference hue on the stained side of the split.
    pub brown_hue_deg: f64,
}

impl StainProfile {
    pub fn validate(&self) -> Result<()> {
        if self.annotator_id.is_empty() || self.annotator_id.contains(['\n', '\r']) {
            return Err(Error::Validation("annotator_id must be a non-empty single line".into()));
        }
        for (name, v) in [("hue_split_deg", self.hue_split_deg), ("brown_hue_deg", self.brown_hue_deg)] {
            if !(0.0..360.0).contains(&v) {
                return Err(Error::Validation(format!("{name}={v} outside [0, 360)")));
            }
        }
        let side = signed_arc(self.hue_split_deg, self.brown_hue_deg);
        if side == 0.0 || side == 180.0 {
            return Err(Error::Validation(
                "brown_hue_deg lies on the split diameter; stained side is undefined".into(),
            ));
        }
        for (name, v) in [("value_left", self.value_left), ("value_right", self.value_right)] {
            if !(0.0..=255.0).contains(&v) {
                return Err(Error::Validation(format!("{name}={v} outside [0, 255]")));
            }
        }
        if !(self.value_left < self.value_right) {
            return Err(Error::Validation(format!(
                "value_left ({}) must be below value_right ({})",
                self.value_left, self.value_right
            )));
        }
        if let Some(obj) = self.objective {
            if !obj.is_finite() {
                return Err(Error::Validation(format!("objective {obj} is not finite")));
            }
        }
        Ok(())
    }

    /// True when `hue` falls on the brown half of the hue circle.
    pub fn is_brown(&self, hue: f64) -> bool {
        let side = signed_arc(self.hue_split_deg, hue);
        let brown = signed_arc(self.hue_split_deg, self.brown_hue_deg);
        side != 0.0 && (side > 0.0) == (brown > 0.0)
    }

    /// Intensity class of a stained nucleus from its mean Value.
    pub fn grade_value(&self, value: f64) -> StainClass {
        grade_value(value, self.value_left, self.value_right)
    }

    pub fn classify_hsv(&self, hsv: &HsvPixel) -> StainClass {
        if self.is_brown(hsv.hue) {
            self.grade_value(hsv.value)
        } else {
            StainClass::None
        }
    }
}

#[inline]
pub(crate) fn grade_value(value: f64, left: f64, right: f64) -> StainClass {
    if value < left {
        StainClass::Strong
    } else if value < right {
        StainClass::Moderate
    } else {
        StainClass::Weak
    }
}

/// Mean color of a nucleus and the class assigned to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NucleusMeasurement {
    pub hsv: HsvPixel,
    pub class: StainClass,
}

/// Mean HSV of the sampling square around a keypoint.
pub fn measure_nucleus(image: &RgbImage, keypoint: &Keypoint, half_side: u32) -> Result<HsvPixel> {
    let mean = patch_mean(image, (keypoint.x, keypoint.y), half_side)?;
    Ok(rgb_to_hsv(mean))
}

pub fn classify_nucleus(
    image: &RgbImage,
    keypoint: &Keypoint,
    profile: &StainProfile,
) -> Result<StainClass> {
    Ok(measure_and_classify(image, keypoint, profile)?.class)
}

pub fn measure_and_classify(
    image: &RgbImage,
    keypoint: &Keypoint,
    profile: &StainProfile,
) -> Result<NucleusMeasurement> {
    let hsv = measure_nucleus(image, keypoint, profile.nucleus_half_side_px)?;
    Ok(NucleusMeasurement {
        hsv,
        class: profile.classify_hsv(&hsv),
    })
}

/// Result of the hue-peak threshold estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HueSplit {
    pub split_deg: f64,
    pub blue_peak_deg: f64,
    pub brown_peak_deg: f64,
}

/// Center (integer degree) of the fullest bin of a 360-bin hue histogram;
/// bins are centred on whole degrees and the first bin wins ties.
pub fn hue_histogram_peak(hues: &[f64]) -> Result<f64> {
    if hues.is_empty() {
        return Err(Error::domain("hue sample is empty"));
    }
    let mut bins = [0u64; 360];
    for &h in hues {
        if !h.is_finite() {
            return Err(Error::domain(format!("non-finite hue {h}")));
        }
        bins[(h.round() as i64).rem_euclid(360) as usize] += 1;
    }
    let mut best = 0;
    for i in 1..360 {
        if bins[i] > bins[best] {
            best = i;
        }
    }
    Ok(best as f64)
}

/// Places the blue/brown hue threshold midway between the two histogram peaks.
pub fn estimate_hue_split(blue_hues: &[f64], brown_hues: &[f64]) -> Result<HueSplit> {
    let blue = hue_histogram_peak(blue_hues)?;
    let brown = hue_histogram_peak(brown_hues)?;
    Ok(HueSplit {
        split_deg: normalize_degrees((blue + brown) / 2.0),
        blue_peak_deg: blue,
        brown_peak_deg: brown,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::color::hsv_to_rgb8;
    use crate::keypoints::Compartment;

    pub(crate) fn profile(left: f64, right: f64) -> StainProfile {
        StainProfile {
            annotator_id: "a1".into(),
            hue_split_deg: 125.0,
            value_left: left,
            value_right: right,
            nucleus_half_side_px: 3,
            created_utc: "2024-01-01T00:00:00Z".into(),
            objective: None,
            brown_hue_deg: 30.0,
        }
    }

    fn patch(hue: f64, value: f64) -> RgbImage {
        let rgb = hsv_to_rgb8(HsvPixel {
            hue,
            saturation: 180.0,
            value,
        });
        RgbImage::filled(16, 16, rgb).unwrap()
    }

    fn kp() -> Keypoint {
        Keypoint::new(8.0, 8.0, Compartment::Stroma, 1.0)
    }

    #[test]
    fn grades_brown_by_value() {
        let p = profile(80.0, 120.0);
        assert_eq!(classify_nucleus(&patch(30.0, 50.0), &kp(), &p).unwrap(), StainClass::Strong);
        assert_eq!(classify_nucleus(&patch(30.0, 100.0), &kp(), &p).unwrap(), StainClass::Moderate);
        assert_eq!(classify_nucleus(&patch(30.0, 200.0), &kp(), &p).unwrap(), StainClass::Weak);
        assert_eq!(classify_nucleus(&patch(220.0, 50.0), &kp(), &p).unwrap(), StainClass::None);
    }

    #[test]
    fn boundaries_are_lower_closed() {
        let p = profile(80.0, 120.0);
        assert_eq!(p.grade_value(79.999), StainClass::Strong);
        assert_eq!(p.grade_value(80.0), StainClass::Moderate);
        assert_eq!(p.grade_value(120.0), StainClass::Weak);
    }

    #[test]
    fn hue_side_wraps_around_zero() {
        let p = profile(80.0, 120.0);
        assert!(p.is_brown(350.0));
        assert!(p.is_brown(0.0));
        assert!(!p.is_brown(200.0));
        assert!(!p.is_brown(125.0));
        let mirrored = StainProfile {
            hue_split_deg: 305.0,
            ..p.clone()
        };
        // same diameter, same partition
        for h in (0..360).step_by(7) {
            let h = h as f64;
            if h != 125.0 && h != 305.0 {
                assert_eq!(p.is_brown(h), mirrored.is_brown(h), "{h}");
            }
        }
    }

    #[test]
    fn keypoint_outside_image() {
        let p = profile(80.0, 120.0);
        let far = Keypoint::new(16.0, 0.0, Compartment::Stroma, 1.0);
        assert!(classify_nucleus(&patch(30.0, 50.0), &far, &p).is_err());
    }

    #[test]
    fn validation() {
        assert!(profile(80.0, 120.0).validate().is_ok());
        assert!(profile(120.0, 120.0).validate().is_err());
        assert!(profile(130.0, 120.0).validate().is_err());
        let mut p = profile(80.0, 120.0);
        p.brown_hue_deg = 305.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn hue_split_of_point_masses() {
        let s = estimate_hue_split(&[220.0; 5], &[30.0; 7]).unwrap();
        assert_eq!(s.split_deg, 125.0);
        assert_eq!((s.blue_peak_deg, s.brown_peak_deg), (220.0, 30.0));

        let same = estimate_hue_split(&[40.2, 40.0], &[39.8]).unwrap();
        assert_eq!(same.split_deg, 40.0);

        assert!(estimate_hue_split(&[], &[1.0]).is_err());
        assert!(estimate_hue_split(&[1.0], &[]).is_err());
    }

    #[test]
    fn hue_split_of_gaussian_samples() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let brown: Vec<f64> = Normal::new(25.0, 8.0)
            .unwrap()
            .sample_iter(&mut rng)
            .take(10_000)
            .map(normalize_degrees)
            .collect();
        let blue: Vec<f64> = Normal::new(215.0, 10.0)
            .unwrap()
            .sample_iter(&mut rng)
            .take(10_000)
            .map(normalize_degrees)
            .collect();

        // oracle: bin counts by direct comparison against each bin interval
        let peak = |xs: &[f64]| {
            let mut best = (0usize, 0usize);
            for b in 0..360usize {
                let n = xs
                    .iter()
                    .filter(|&&h| {
                        let lo = b as f64 - 0.5;
                        let hi = b as f64 + 0.5;
                        (h >= lo && h < hi) || (b == 0 && h >= 359.5)
                    })
                    .count();
                if n > best.1 {
                    best = (b, n);
                }
            }
            best.0 as f64
        };
        let expected = (peak(&blue) + peak(&brown)) / 2.0;
        let got = estimate_hue_split(&blue, &brown).unwrap();
        assert_eq!(got.split_deg, expected);
        assert!((got.split_deg - 120.0).abs() <= 3.0, "{}", got.split_deg);
    }
}
