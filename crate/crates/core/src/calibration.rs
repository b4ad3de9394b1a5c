//! Per-annotator Value threshold calibration and profile persistence.
//!
//! For every admissible `(left, right)` pair on an integer grid the model's
//! keypoints are graded with those thresholds and the resulting H-score is
//! compared with the H-score implied by the annotator's own stain labels.
//! The pair with the smallest mean absolute deviation over slides and
//! compartments wins; ties go to the smallest `left`, then `right`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hscore::{compute_hscore, StainCounts};
use crate::keypoints::{Compartment, Keypoint};
use crate::stain::{measure_nucleus, StainClass, StainProfile};
use crate::tiling::Tile;

/// An annotated nucleus with the annotator's stain label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledKeypoint {
    pub keypoint: Keypoint,
    pub label: StainClass,
}

/// One tile of a calibration set: image, annotator labels, model keypoints.
#[derive(Debug, Clone)]
pub struct CalibrationItem {
    pub tile: Tile,
    pub annotated: Vec<LabeledKeypoint>,
    pub predicted: Vec<Keypoint>,
}

#[derive(Debug, Clone)]
pub struct CalibrationSet {
    pub annotator_id: String,
    pub items: Vec<CalibrationItem>,
}

impl CalibrationSet {
    pub fn validate(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::domain("calibration set is empty"));
        }
        let stained = self
            .items
            .iter()
            .flat_map(|i| &i.annotated)
            .any(|a| a.label != StainClass::None);
        if !stained {
            return Err(Error::domain("calibration set has no stained annotated nucleus"));
        }
        Ok(())
    }

    /// Distinct slide ids in sorted order.
    pub fn slide_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.items.iter().map(|i| i.tile.slide_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Subset of items whose slide passes `keep`.
    pub fn filter_slides(&self, keep: impl Fn(&str) -> bool) -> CalibrationSet {
        CalibrationSet {
            annotator_id: self.annotator_id.clone(),
            items: self
                .items
                .iter()
                .filter(|i| keep(&i.tile.slide_id))
                .cloned()
                .collect(),
        }
    }
}

/// Integer Value grid `lo, lo+step, ..., hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GridSpec {
    pub lo: u32,
    pub hi: u32,
    pub step: u32,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lo: 40,
            hi: 160,
            step: 5,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.step == 0 {
            return Err(Error::domain("grid step must be positive"));
        }
        if !(self.lo < self.hi && self.hi <= 255) {
            return Err(Error::domain(format!(
                "grid range [{}, {}] must satisfy lo < hi <= 255",
                self.lo, self.hi
            )));
        }
        if (self.hi - self.lo) % self.step != 0 {
            return Err(Error::domain(format!(
                "grid step {} does not divide [{}, {}]",
                self.step, self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<u32> {
        (self.lo..=self.hi).step_by(self.step as usize).collect()
    }

    /// Admissible `(left, right)` pairs with `left < right`, in tie-break order.
    pub fn pairs(&self) -> Vec<(u32, u32)> {
        let v = self.values();
        let mut out = Vec::new();
        for (i, &l) in v.iter().enumerate() {
            for &r in &v[i + 1..] {
                out.push((l, r));
            }
        }
        out
    }
}

/// Fixed inputs of a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationParams {
    pub grid: GridSpec,
    pub hue_split_deg: f64,
    pub brown_hue_deg: f64,
    pub nucleus_half_side_px: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationResult {
    /// Fitted profile; `created_utc` is left empty for the caller to stamp.
    pub profile: StainProfile,
    pub objective: f64,
    pub pairs_evaluated: usize,
}

/// Model measurements of one slide/compartment, ready for threshold sweeps.
#[derive(Debug, Default, Clone)]
struct Group {
    reference: StainCounts,
    unstained: u64,
    /// Sorted Values of model nuclei on the brown side of the hue split.
    stained_values: Vec<f64>,
}

impl Group {
    fn model_counts(&self, left: f64, right: f64) -> StainCounts {
        let below = |t: f64| self.stained_values.partition_point(|&v| v < t) as u64;
        let strong = below(left);
        let moderate = below(right) - strong;
        let weak = self.stained_values.len() as u64 - strong - moderate;
        StainCounts {
            none: self.unstained,
            weak,
            moderate,
            strong,
        }
    }

    fn model_total(&self) -> u64 {
        self.unstained + self.stained_values.len() as u64
    }
}

fn probe_profile(params: &CalibrationParams, annotator: &str, left: f64, right: f64) -> StainProfile {
    StainProfile {
        annotator_id: annotator.to_string(),
        hue_split_deg: params.hue_split_deg,
        value_left: left,
        value_right: right,
        nucleus_half_side_px: params.nucleus_half_side_px,
        created_utc: String::new(),
        objective: None,
        brown_hue_deg: params.brown_hue_deg,
    }
}

/// Groups keyed by slide id, each holding `[stroma, epithelium]`.
fn build_groups(
    set: &CalibrationSet,
    params: &CalibrationParams,
) -> Result<BTreeMap<String, [Group; 2]>> {
    let probe = probe_profile(params, &set.annotator_id, 0.0, 1.0);
    let measured: Vec<Vec<(Compartment, Option<f64>)>> = set
        .items
        .par_iter()
        .map(|item| {
            item.predicted
                .iter()
                .map(|kp| {
                    let hsv = measure_nucleus(&item.tile.image, kp, params.nucleus_half_side_px)
                        .map_err(|e| {
                            Error::Domain(format!("tile {}: {e}", item.tile.tile_id))
                        })?;
                    Ok((kp.class, probe.is_brown(hsv.hue).then_some(hsv.value)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut groups: BTreeMap<String, [Group; 2]> = BTreeMap::new();
    for (item, measures) in set.items.iter().zip(measured) {
        let slide = groups.entry(item.tile.slide_id.clone()).or_default();
        for a in &item.annotated {
            slide[a.keypoint.class.index()].reference.add(a.label, 1);
        }
        for (class, value) in measures {
            let g = &mut slide[class.index()];
            match value {
                Some(v) => g.stained_values.push(v),
                None => g.unstained += 1,
            }
        }
    }
    for slide in groups.values_mut() {
        for g in slide.iter_mut() {
            g.stained_values.sort_by(f64::total_cmp);
        }
    }
    Ok(groups)
}

fn objective(groups: &[&Group], left: f64, right: f64) -> f64 {
    let mut total = 0.0;
    for g in groups {
        let reference = compute_hscore(&g.reference).expect("comparable groups are non-empty");
        let model = compute_hscore(&g.model_counts(left, right)).expect("comparable groups are non-empty");
        total += (model - reference).abs();
    }
    total / groups.len() as f64
}

/// Exhaustive grid search for the annotator's Value thresholds.
pub fn calibrate(set: &CalibrationSet, params: &CalibrationParams) -> Result<CalibrationResult> {
    set.validate()?;
    params.grid.validate()?;
    let pairs = params.grid.pairs();
    if pairs.is_empty() {
        return Err(Error::domain("grid has no admissible (left < right) pair"));
    }
    // hue orientation is checked once up front
    probe_profile(params, &set.annotator_id, 0.0, 1.0).validate()?;

    let groups = build_groups(set, params)?;
    let comparable: Vec<&Group> = groups
        .values()
        .flat_map(|slide| slide.iter())
        .filter(|g| g.reference.total() > 0 && g.model_total() > 0)
        .collect();
    if comparable.is_empty() {
        return Err(Error::domain(
            "no slide/compartment has both annotated and predicted nuclei",
        ));
    }

    let scores: Vec<f64> = pairs
        .par_iter()
        .map(|&(l, r)| objective(&comparable, l as f64, r as f64))
        .collect();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s < scores[best] {
            best = i;
        }
    }
    let (l, r) = pairs[best];
    let mut profile = probe_profile(params, &set.annotator_id, l as f64, r as f64);
    profile.objective = Some(scores[best]);
    Ok(CalibrationResult {
        profile,
        objective: scores[best],
        pairs_evaluated: pairs.len(),
    })
}

/// Objective of a fixed threshold pair, for auditing a search result.
pub fn objective_at(set: &CalibrationSet, params: &CalibrationParams, left: f64, right: f64) -> Result<f64> {
    set.validate()?;
    let groups = build_groups(set, params)?;
    let comparable: Vec<&Group> = groups
        .values()
        .flat_map(|slide| slide.iter())
        .filter(|g| g.reference.total() > 0 && g.model_total() > 0)
        .collect();
    if comparable.is_empty() {
        return Err(Error::domain("no comparable slide/compartment"));
    }
    Ok(objective(&comparable, left, right))
}

/// One fold of leave-one-slide-out calibration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LosoFold {
    pub held_out_slide: String,
    pub value_left: f64,
    pub value_right: f64,
    pub train_objective: f64,
    /// Held-out H-scores from annotator labels, `[stroma, epithelium]`.
    pub manual: [Option<f64>; 2],
    /// Held-out H-scores from model keypoints under the fold's thresholds.
    pub model: [Option<f64>; 2],
}

/// Calibrates each slide's thresholds on all the other slides, then scores
/// the held-out slide with them.
pub fn leave_one_slide_out(set: &CalibrationSet, params: &CalibrationParams) -> Result<Vec<LosoFold>> {
    set.validate()?;
    let slides = set.slide_ids();
    if slides.len() < 2 {
        return Err(Error::domain("leave-one-slide-out needs at least two slides"));
    }
    let groups = build_groups(set, params)?;
    slides
        .iter()
        .map(|held| {
            let train = set.filter_slides(|s| s != held);
            let fit = calibrate(&train, params)?;
            let (l, r) = (fit.profile.value_left, fit.profile.value_right);
            let g = &groups[held];
            Ok(LosoFold {
                held_out_slide: held.clone(),
                value_left: l,
                value_right: r,
                train_objective: fit.objective,
                manual: [compute_hscore(&g[0].reference), compute_hscore(&g[1].reference)],
                model: [
                    compute_hscore(&g[0].model_counts(l, r)),
                    compute_hscore(&g[1].model_counts(l, r)),
                ],
            })
        })
        .collect()
}

const PROFILE_KEYS: [&str; 8] = [
    "annotator_id",
    "hue_split_deg",
    "value_left",
    "value_right",
    "nucleus_half_side_px",
    "created_utc",
    "objective",
    "brown_hue_deg",
];

/// Serializes a profile as `key=value` lines in fixed order.
pub fn profile_to_string(p: &StainProfile) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "annotator_id={}", p.annotator_id);
    let _ = writeln!(s, "hue_split_deg={}", p.hue_split_deg);
    let _ = writeln!(s, "value_left={}", p.value_left);
    let _ = writeln!(s, "value_right={}", p.value_right);
    let _ = writeln!(s, "nucleus_half_side_px={}", p.nucleus_half_side_px);
    let _ = writeln!(s, "created_utc={}", p.created_utc);
    match p.objective {
        Some(o) => {
            let _ = writeln!(s, "objective={o}");
        }
        None => s.push_str("objective=\n"),
    }
    let _ = writeln!(s, "brown_hue_deg={}", p.brown_hue_deg);
    s
}

/// Parses and validates a profile. `brown_hue_deg` may be absent, in which
/// case the stained side is taken to be the lower-hue half (split − 90°).
pub fn parse_profile(text: &str, path: Option<&Path>) -> Result<StainProfile> {
    let err = |line: usize, field: &str, message: String| Error::Parse {
        path: path.map(Path::to_path_buf),
        line,
        field: field.to_string(),
        message,
    };
    let mut values: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(lineno, line, "expected key=value".into()))?;
        let key = key.trim();
        if !PROFILE_KEYS.contains(&key) {
            return Err(err(lineno, key, "unknown field".into()));
        }
        if values.insert(key, (lineno, value.trim())).is_some() {
            return Err(err(lineno, key, "duplicate field".into()));
        }
    }
    let eof = text.lines().count() + 1;
    let get = |key: &str| values.get(key).copied().ok_or_else(|| err(eof, key, "missing field".into()));
    let num = |key: &str| -> Result<f64> {
        let (line, v) = get(key)?;
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| err(line, key, format!("`{v}` is not a finite number")))
    };

    let hue_split_deg = num("hue_split_deg")?;
    let objective = match get("objective")? {
        (_, "") => None,
        _ => Some(num("objective")?),
    };
    let brown_hue_deg = if values.contains_key("brown_hue_deg") {
        num("brown_hue_deg")?
    } else {
        crate::color::normalize_degrees(hue_split_deg - 90.0)
    };
    let (half_line, half) = get("nucleus_half_side_px")?;
    let profile = StainProfile {
        annotator_id: get("annotator_id")?.1.to_string(),
        hue_split_deg,
        value_left: num("value_left")?,
        value_right: num("value_right")?,
        nucleus_half_side_px: half
            .parse()
            .map_err(|_| err(half_line, "nucleus_half_side_px", format!("`{half}` is not a pixel count")))?,
        created_utc: get("created_utc")?.1.to_string(),
        objective,
        brown_hue_deg,
    };
    profile.validate()?;
    Ok(profile)
}

pub fn save_profile(profile: &StainProfile, path: impl AsRef<Path>) -> Result<()> {
    profile.validate()?;
    let path = path.as_ref();
    std::fs::write(path, profile_to_string(profile)).map_err(|e| Error::io(path, e))
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<StainProfile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_profile(&text, Some(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stain::tests::profile;
    use proptest::prelude::*;

    #[test]
    fn grid_pairs() {
        let g = GridSpec { lo: 40, hi: 50, step: 5 };
        assert_eq!(g.pairs(), vec![(40, 45), (40, 50), (45, 50)]);
        assert_eq!(GridSpec::default().values().len(), 25);
        assert!(GridSpec { lo: 40, hi: 52, step: 5 }.validate().is_err());
        assert!(GridSpec { lo: 50, hi: 50, step: 5 }.validate().is_err());
    }

    #[test]
    fn profile_text_roundtrip() {
        let mut p = profile(80.0, 125.0);
        p.objective = Some(1.25);
        let text = profile_to_string(&p);
        assert!(text.starts_with("annotator_id=a1\nhue_split_deg=125\nvalue_left=80\n"));
        let back = parse_profile(&text, None).unwrap();
        assert_eq!(back, p);
        assert_eq!(profile_to_string(&back), text);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a1.profile");
        let p = profile(75.0, 130.0);
        save_profile(&p, &path).unwrap();
        assert_eq!(load_profile(&path).unwrap(), p);
    }

    #[test]
    fn missing_field_is_named() {
        let text = profile_to_string(&profile(80.0, 120.0));
        let without: String = text
            .lines()
            .filter(|l| !l.starts_with("value_right"))
            .map(|l| format!("{l}\n"))
            .collect();
        match parse_profile(&without, None) {
            Err(Error::Parse { field, .. }) => assert_eq!(field, "value_right"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_number_reports_line() {
        let text = profile_to_string(&profile(80.0, 120.0)).replace("value_left=80", "value_left=eighty");
        match parse_profile(&text, None) {
            Err(Error::Parse { field, line, .. }) => assert_eq!((field.as_str(), line), ("value_left", 3)),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn inverted_thresholds_fail_validation() {
        let text = profile_to_string(&profile(80.0, 120.0)).replace("value_left=80", "value_left=130");
        assert!(matches!(parse_profile(&text, None), Err(Error::Validation(_))));
    }

    #[test]
    fn brown_reference_defaults_below_split() {
        let text: String = profile_to_string(&profile(80.0, 120.0))
            .lines()
            .filter(|l| !l.starts_with("brown_hue_deg"))
            .map(|l| format!("{l}\n"))
            .collect();
        let p = parse_profile(&text, None).unwrap();
        assert_eq!(p.brown_hue_deg, 35.0);
    }

    proptest! {
        #[test]
        fn arbitrary_profiles_roundtrip(
            split in 0.0f64..360.0,
            left in 0.0f64..200.0,
            gap in 0.001f64..55.0,
            half in 0u32..40,
            obj in proptest::option::of(0.0f64..300.0),
        ) {
            let p = StainProfile {
                annotator_id: "dr-x".into(),
                hue_split_deg: split,
                value_left: left,
                value_right: left + gap,
                nucleus_half_side_px: half,
                created_utc: "2025-03-04T05:06:07Z".into(),
                objective: obj,
                brown_hue_deg: crate::color::normalize_degrees(split + 90.0),
            };
            prop_assume!(p.validate().is_ok());
            let text = profile_to_string(&p);
            let back = parse_profile(&text, None).unwrap();
            prop_assert_eq!(&back, &p);
            prop_assert_eq!(profile_to_string(&back), text);
        }
    }
}
