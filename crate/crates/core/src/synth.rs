//! Deterministic synthetic tiles with planted nuclei.
//!
//! Nuclei are filled uniform-colour disks, so any sampling square that fits
//! inside a disk measures exactly the planted colour. Every planted Value is
//! an integer, which survives the 8-bit round trip unchanged.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::calibration::{CalibrationItem, CalibrationSet, LabeledKeypoint};
use crate::color::{hsv_to_rgb8, HsvPixel};
use crate::error::{Error, Result};
use crate::hscore::{compute_hscore, ClassCounts};
use crate::keypoints::{Compartment, Keypoint};
use crate::raster::RgbImage;
use crate::stain::{StainClass, StainProfile};
use crate::tiling::Tile;

/// Hues and saturation of the two stains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Palette {
    pub blue_hue_deg: f64,
    pub brown_hue_deg: f64,
    pub saturation: f64,
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            blue_hue_deg: 215.0,
            brown_hue_deg: 30.0,
            saturation: 170.0,
        }
    }
}

/// Inclusive integer Value ranges, indexed by [`StainClass`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ValueBands(pub [(u8, u8); 4]);

impl ValueBands {
    /// Bands sitting 5 inside the thresholds of `left`/`right`.
    pub fn around(left: u8, right: u8) -> Self {
        ValueBands([
            (130, 200),
            (right + 5, right.saturating_add(45)),
            (left + 5, right - 5),
            (left.saturating_sub(35), left - 5),
        ])
    }

    pub fn band(&self, class: StainClass) -> (u8, u8) {
        self.0[class.index()]
    }
}

/// Everything needed to plant one tile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSpec {
    pub tile_size: u32,
    pub nuclei: usize,
    /// `[stroma, epithelium]`.
    pub compartment_mix: [f64; 2],
    /// `[none, weak, moderate, strong]`.
    pub class_mix: [f64; 4],
    pub palette: Palette,
    pub bands: ValueBands,
    pub nucleus_radius_px: u32,
    /// Minimum centre distance; must exceed twice the radius.
    pub min_separation_px: f64,
    pub background: [u8; 3],
    pub seed: u64,
    /// Placement attempts allowed per nucleus.
    pub attempt_budget: usize,
    /// Profile under which the bands grade to their classes.
    pub reference: StainProfile,
}

/// Profile matching [`SynthSpec::default`].
pub fn reference_profile() -> StainProfile {
    StainProfile {
        annotator_id: "synth-reference".into(),
        hue_split_deg: 122.5,
        value_left: 80.0,
        value_right: 125.0,
        nucleus_half_side_px: 7,
        created_utc: "1970-01-01T00:00:00Z".into(),
        objective: None,
        brown_hue_deg: 30.0,
    }
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            tile_size: 512,
            nuclei: 40,
            compartment_mix: [0.5, 0.5],
            class_mix: [0.25, 0.25, 0.25, 0.25],
            palette: Palette::default(),
            bands: ValueBands::around(80, 125),
            nucleus_radius_px: 10,
            min_separation_px: 24.0,
            background: [205, 190, 200],
            seed: 0,
            attempt_budget: 10_000,
            reference: reference_profile(),
        }
    }
}

fn check_mix(name: &str, mix: &[f64]) -> Result<()> {
    if mix.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("{name} must be non-negative and sum to 1, got {mix:?}")));
    }
    Ok(())
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        check_mix("compartment_mix", &self.compartment_mix)?;
        check_mix("class_mix", &self.class_mix)?;
        self.reference.validate()?;
        let r = self.nucleus_radius_px as f64;
        if self.nucleus_radius_px == 0 || 2 * self.nucleus_radius_px + 1 > self.tile_size {
            return Err(Error::domain("nucleus radius must be >= 1 and fit inside the tile"));
        }
        if !(self.min_separation_px > 2.0 * r) {
            return Err(Error::domain(format!(
                "min separation {} must exceed twice the nucleus radius {r}",
                self.min_separation_px
            )));
        }
        let h = self.reference.nucleus_half_side_px as f64;
        if 2.0 * h * h > r * r {
            return Err(Error::domain(format!(
                "sampling square of half side {h} does not fit inside a disk of radius {r}"
            )));
        }
        let (left, right) = (self.reference.value_left, self.reference.value_right);
        for class in StainClass::ALL {
            let (lo, hi) = self.bands.band(class);
            if lo > hi {
                return Err(Error::domain(format!("{class} band is empty")));
            }
            let (lo, hi) = (lo as f64, hi as f64);
            let ok = match class {
                StainClass::None => true,
                StainClass::Strong => hi <= left - 5.0,
                StainClass::Moderate => lo >= left + 5.0 && hi <= right - 5.0,
                StainClass::Weak => lo >= right + 5.0,
            };
            if !ok {
                return Err(Error::domain(format!(
                    "{class} band [{lo}, {hi}] is not 5 inside the reference thresholds ({left}, {right})"
                )));
            }
        }
        let p = &self.palette;
        if !self.reference.is_brown(p.brown_hue_deg) || self.reference.is_brown(p.blue_hue_deg) {
            return Err(Error::domain("palette hues fall on the wrong side of the reference split"));
        }
        if !(p.saturation > 0.0 && p.saturation <= 255.0) {
            return Err(Error::domain("palette saturation must lie in (0, 255]"));
        }
        Ok(())
    }

    /// Colour of a nucleus of `class` with integer Value `value`.
    pub fn color(&self, class: StainClass, value: u8) -> [u8; 3] {
        let hue = match class {
            StainClass::None => self.palette.blue_hue_deg,
            _ => self.palette.brown_hue_deg,
        };
        hsv_to_rgb8(HsvPixel {
            hue,
            saturation: self.palette.saturation,
            value: value as f64,
        })
    }
}

/// Splits `total` by `fractions`; leftover units go to the largest
/// fractional parts, lower index first on ties.
pub fn largest_remainder(total: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// A nucleus to plant, before placement.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Planned {
    compartment: Compartment,
    class: StainClass,
    value: u8,
}

/// A planted tile and its oracle values.
#[derive(Debug, Clone)]
pub struct SynthTile {
    pub tile: Tile,
    /// Planted centres with confidence 1 and their stain classes.
    pub keypoints: Vec<LabeledKeypoint>,
    pub counts: ClassCounts,
    /// `[stroma, epithelium]`; `None` for an empty compartment.
    pub expected: [Option<f64>; 2],
}

impl SynthTile {
    pub fn plain_keypoints(&self) -> Vec<Keypoint> {
        self.keypoints.iter().map(|k| k.keypoint).collect()
    }
}

/// Expected H-scores of planted counts.
pub fn expected_hscores(counts: &ClassCounts) -> [Option<f64>; 2] {
    Compartment::ALL.map(|c| compute_hscore(counts.compartment(c)))
}

fn plan_from_mix(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Planned> {
    let per_compartment = largest_remainder(spec.nuclei, &spec.compartment_mix);
    let mut plan = Vec::with_capacity(spec.nuclei);
    for (ci, &n) in per_compartment.iter().enumerate() {
        let per_class = largest_remainder(n, &spec.class_mix);
        for (k, &m) in per_class.iter().enumerate() {
            let class = StainClass::ALL[k];
            let (lo, hi) = spec.bands.band(class);
            for _ in 0..m {
                plan.push(Planned {
                    compartment: Compartment::ALL[ci],
                    class,
                    value: rng.random_range(lo..=hi),
                });
            }
        }
    }
    plan.shuffle(rng);
    plan
}

fn place_and_draw(
    spec: &SynthSpec,
    plan: &[Planned],
    rng: &mut ChaCha8Rng,
    slide_id: &str,
    tile_id: &str,
    microns_per_pixel: f64,
) -> Result<SynthTile> {
    let r = spec.nucleus_radius_px;
    let (lo, hi) = (r, spec.tile_size - 1 - r);
    let sep_sq = spec.min_separation_px * spec.min_separation_px;
    let mut centers: Vec<(u32, u32)> = Vec::with_capacity(plan.len());
    for i in 0..plan.len() {
        let mut placed = false;
        for _ in 0..spec.attempt_budget {
            let c = (rng.random_range(lo..=hi), rng.random_range(lo..=hi));
            let clear = centers.iter().all(|&(x, y)| {
                let (dx, dy) = (x as f64 - c.0 as f64, y as f64 - c.1 as f64);
                dx * dx + dy * dy >= sep_sq
            });
            if clear {
                centers.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Capacity(format!(
                "nucleus {} of {} could not be placed with min separation {} px in a {}x{} tile after {} attempts",
                i + 1,
                plan.len(),
                spec.min_separation_px,
                spec.tile_size,
                spec.tile_size,
                spec.attempt_budget
            )));
        }
    }

    let mut image = RgbImage::filled(spec.tile_size, spec.tile_size, spec.background)?;
    let r_sq = (r * r) as i64;
    let mut keypoints = Vec::with_capacity(plan.len());
    let mut counts = ClassCounts::default();
    for (p, &(cx, cy)) in plan.iter().zip(&centers) {
        let rgb = spec.color(p.class, p.value);
        for y in cy - r..=cy + r {
            for x in cx - r..=cx + r {
                let (dx, dy) = (x as i64 - cx as i64, y as i64 - cy as i64);
                if dx * dx + dy * dy <= r_sq {
                    image.put_pixel(x, y, rgb);
                }
            }
        }
        keypoints.push(LabeledKeypoint {
            keypoint: Keypoint::new(cx as f64, cy as f64, p.compartment, 1.0),
            label: p.class,
        });
        counts.record(p.compartment, p.class);
    }
    Ok(SynthTile {
        tile: Tile::new(tile_id, slide_id, image, microns_per_pixel, (0, 0))?,
        keypoints,
        expected: expected_hscores(&counts),
        counts,
    })
}

/// Field of view used for synthetic tiles, in micrometers.
pub const SYNTH_FOV_UM: f64 = 100.0;

/// Plants one tile from `spec.seed`.
pub fn generate_tile(spec: &SynthSpec, slide_id: &str, tile_id: &str) -> Result<SynthTile> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let plan = plan_from_mix(spec, &mut rng);
    place_and_draw(spec, &plan, &mut rng, slide_id, tile_id, SYNTH_FOV_UM / spec.tile_size as f64)
}

/// SplitMix64 finaliser over a sequence of words.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut z = master;
    for &p in parts {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p.wrapping_mul(0xBF58_476D_1CE4_E5B9));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D1_049B_133E_11EB);
        z ^= z >> 31;
    }
    z
}

/// A synthetic slide: a raster of `rows x cols` planted tiles.
#[derive(Debug, Clone)]
pub struct SynthSlide {
    pub slide_id: String,
    pub raster: RgbImage,
    /// Chosen so that tiling at [`SYNTH_FOV_UM`] returns the planted tiles.
    pub microns_per_pixel: f64,
    /// Row-major; ids and origins match what tiling the raster produces.
    pub tiles: Vec<SynthTile>,
}

/// Plants a slide. Tile `i` uses seed `derive_seed(spec.seed, [slide_index, i])`.
pub fn generate_slide(spec: &SynthSpec, slide_index: u64, slide_id: &str, rows: u32, cols: u32) -> Result<SynthSlide> {
    spec.validate()?;
    if rows == 0 || cols == 0 {
        return Err(Error::domain("slide must have at least one tile row and column"));
    }
    let size = spec.tile_size;
    let tiles: Vec<SynthTile> = (0..rows * cols)
        .into_par_iter()
        .map(|i| {
            let (row, col) = (i / cols, i % cols);
            let mut s = spec.clone();
            s.seed = derive_seed(spec.seed, &[slide_index, i as u64]);
            let mut t = generate_tile(&s, slide_id, &format!("{slide_id}_r{row:03}_c{col:03}"))?;
            t.tile.origin = (col * size, row * size);
            Ok(t)
        })
        .collect::<Result<_>>()?;
    let mut raster = RgbImage::filled(cols * size, rows * size, spec.background)?;
    for t in &tiles {
        raster.blit(&t.tile.image, t.tile.origin.0, t.tile.origin.1);
    }
    Ok(SynthSlide {
        slide_id: slide_id.to_string(),
        raster,
        microns_per_pixel: SYNTH_FOV_UM / size as f64,
        tiles,
    })
}

/// Layout of a synthetic calibration set with planted thresholds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationSynthSpec {
    /// Drawing parameters; the mixes and bands are ignored.
    pub base: SynthSpec,
    pub value_left: u8,
    pub value_right: u8,
    pub slides: usize,
    pub tiles_per_slide: usize,
    /// Stained nuclei per compartment per tile.
    pub stained_per_group: usize,
    /// Unstained nuclei per compartment per tile.
    pub unstained_per_group: usize,
    pub annotator_id: String,
}

impl CalibrationSynthSpec {
    pub fn new(value_left: u8, value_right: u8, seed: u64) -> Self {
        Self {
            base: SynthSpec {
                tile_size: 256,
                seed,
                ..SynthSpec::default()
            },
            value_left,
            value_right,
            slides: 4,
            tiles_per_slide: 2,
            stained_per_group: 4,
            unstained_per_group: 2,
            annotator_id: "planted".into(),
        }
    }
}

/// What a (slide, compartment) group of a calibration set plants.
///
/// Each group carries one kind, so its H-score can only move one way as the
/// thresholds move, and the four kinds pin both thresholds from both sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GroupKind {
    /// Strong nuclei, one at `left - 5`.
    Strong,
    /// Moderate nuclei, all at `left + 5`.
    ModerateLow,
    /// Moderate nuclei, all at `right - 5`.
    ModerateHigh,
    /// Weak nuclei, one at `right + 5`.
    Weak,
}

const GROUP_KINDS: [GroupKind; 4] = [
    GroupKind::Strong,
    GroupKind::ModerateLow,
    GroupKind::ModerateHigh,
    GroupKind::Weak,
];

fn group_plan(kind: GroupKind, compartment: Compartment, n: usize, left: u8, right: u8, rng: &mut ChaCha8Rng) -> Vec<Planned> {
    (0..n)
        .map(|i| {
            let (class, value) = match kind {
                GroupKind::Strong => (StainClass::Strong, if i == 0 { left - 5 } else { rng.random_range(left - 30..=left - 5) }),
                GroupKind::ModerateLow => (StainClass::Moderate, left + 5),
                GroupKind::ModerateHigh => (StainClass::Moderate, right - 5),
                GroupKind::Weak => (StainClass::Weak, if i == 0 { right + 5 } else { rng.random_range(right + 5..=right + 40) }),
            };
            Planned {
                compartment,
                class,
                value,
            }
        })
        .collect()
}

/// Calibration set whose annotator labels follow the planted thresholds and
/// whose model keypoints coincide with the annotations.
///
/// Slide `s` plants kind `2s mod 4` in stroma and `2s + 1 mod 4` in
/// epithelium, so any two slides cover all four kinds when `slides >= 2`.
pub fn generate_calibration_set(spec: &CalibrationSynthSpec) -> Result<CalibrationSet> {
    let (l, r) = (spec.value_left, spec.value_right);
    if l < 35 || r < l.saturating_add(10) || r > 215 {
        return Err(Error::domain(format!(
            "planted thresholds ({l}, {r}) need 35 <= left, left + 10 <= right <= 215"
        )));
    }
    if spec.slides == 0 || spec.tiles_per_slide == 0 || spec.stained_per_group == 0 {
        return Err(Error::domain("calibration set needs slides, tiles and stained nuclei"));
    }
    let mut base = spec.base.clone();
    base.reference.value_left = l as f64;
    base.reference.value_right = r as f64;
    base.reference.annotator_id = spec.annotator_id.clone();
    base.bands = ValueBands::around(l, r);
    base.validate()?;

    let jobs: Vec<(usize, usize)> = (0..spec.slides)
        .flat_map(|s| (0..spec.tiles_per_slide).map(move |t| (s, t)))
        .collect();
    let items: Vec<CalibrationItem> = jobs
        .par_iter()
        .map(|&(s, t)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base.seed, &[s as u64, t as u64]));
            let mut plan = Vec::new();
            for (ci, compartment) in Compartment::ALL.into_iter().enumerate() {
                let kind = GROUP_KINDS[(2 * s + ci) % 4];
                plan.extend(group_plan(kind, compartment, spec.stained_per_group, l, r, &mut rng));
                let (nlo, nhi) = base.bands.band(StainClass::None);
                for _ in 0..spec.unstained_per_group {
                    plan.push(Planned {
                        compartment,
                        class: StainClass::None,
                        value: rng.random_range(nlo..=nhi),
                    });
                }
            }
            plan.shuffle(&mut rng);
            let slide_id = format!("slide{s:02}");
            let tile_id = format!("{slide_id}_t{t:02}");
            let st = place_and_draw(&base, &plan, &mut rng, &slide_id, &tile_id, SYNTH_FOV_UM / base.tile_size as f64)?;
            Ok(CalibrationItem {
                predicted: st.plain_keypoints(),
                annotated: st.keypoints,
                tile: st.tile,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CalibrationSet {
        annotator_id: spec.annotator_id.clone(),
        items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hscore::score_tiles;
    use crate::stain::classify_nucleus;

    fn small(nuclei: usize, class_mix: [f64; 4], seed: u64) -> SynthSpec {
        SynthSpec {
            tile_size: 256,
            nuclei,
            class_mix,
            seed,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn zero_nuclei_is_background_only() {
        let t = generate_tile(&small(0, [0.25; 4], 1), "s", "t").unwrap();
        assert!(t.keypoints.is_empty());
        assert_eq!(t.expected, [None, None]);
        assert!(t.tile.image.as_raw().chunks(3).all(|p| p == [205, 190, 200]));
    }

    #[test]
    fn all_strong_expects_300() {
        let t = generate_tile(&small(20, [0.0, 0.0, 0.0, 1.0], 2), "s", "t").unwrap();
        assert_eq!(t.expected, [Some(300.0), Some(300.0)]);
    }

    #[test]
    fn mix_expects_200_and_classifies_back() {
        let spec = SynthSpec {
            nuclei: 100,
            class_mix: [0.1, 0.2, 0.3, 0.4],
            seed: 3,
            ..SynthSpec::default()
        };
        let t = generate_tile(&spec, "s", "t").unwrap();
        assert_eq!(t.expected, [Some(200.0), Some(200.0)]);
        for lk in &t.keypoints {
            let m = classify_nucleus(&t.tile.image, &lk.keypoint, &spec.reference).unwrap();
            assert_eq!(m, lk.label);
        }
        let report = score_tiles(&[(t.tile.clone(), t.plain_keypoints())], &spec.reference).unwrap();
        assert_eq!(report.counts(), t.counts);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_tile(&small(30, [0.25; 4], 9), "s", "t").unwrap();
        let b = generate_tile(&small(30, [0.25; 4], 9), "s", "t").unwrap();
        let c = generate_tile(&small(30, [0.25; 4], 10), "s", "t").unwrap();
        assert_eq!(a.tile, b.tile);
        assert_eq!(a.keypoints, b.keypoints);
        assert_ne!(a.tile, c.tile);
    }

    #[test]
    fn separation_and_bounds_hold() {
        let spec = small(60, [0.25; 4], 4);
        let t = generate_tile(&spec, "s", "t").unwrap();
        let r = spec.nucleus_radius_px as f64;
        for (i, a) in t.keypoints.iter().enumerate() {
            let k = a.keypoint;
            assert!(k.x >= r && k.y >= r && k.x <= 255.0 - r && k.y <= 255.0 - r);
            for b in &t.keypoints[i + 1..] {
                assert!(k.distance_sq(&b.keypoint).sqrt() >= spec.min_separation_px);
            }
        }
    }

    #[test]
    fn overfull_tile_is_capacity_error() {
        let mut spec = small(500, [0.25; 4], 5);
        spec.attempt_budget = 50;
        let err = generate_tile(&spec, "s", "t").unwrap_err();
        assert!(matches!(err, Error::Capacity(ref m) if m.contains("min separation")), "{err}");
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = small(1, [0.5, 0.5, 0.5, 0.0], 0);
        assert!(s.validate().is_err());
        s.class_mix = [0.25; 4];
        s.min_separation_px = 20.0;
        assert!(s.validate().is_err());
        s.min_separation_px = 24.0;
        s.bands.0[2] = (78, 100);
        assert!(s.validate().is_err());
    }

    #[test]
    fn largest_remainder_cases() {
        assert_eq!(largest_remainder(100, &[0.1, 0.2, 0.3, 0.4]), vec![10, 20, 30, 40]);
        assert_eq!(largest_remainder(5, &[0.5, 0.5]), vec![3, 2]);
        assert_eq!(largest_remainder(7, &[0.25; 4]), vec![2, 2, 2, 1]);
        assert_eq!(largest_remainder(0, &[1.0]), vec![0]);
    }

    #[test]
    fn slide_tiles_match_raster() {
        let spec = small(10, [0.25; 4], 6);
        let slide = generate_slide(&spec, 0, "s7", 1, 3).unwrap();
        assert_eq!((slide.raster.width(), slide.raster.height()), (768, 256));
        let cut = crate::tiling::cut_tiles(&slide.raster, "s7", slide.microns_per_pixel, SYNTH_FOV_UM, 256).unwrap();
        assert_eq!(cut.len(), 3);
        for (c, t) in cut.iter().zip(&slide.tiles) {
            assert_eq!(c.tile_id, t.tile.tile_id);
            assert_eq!(c.image, t.tile.image);
            assert_eq!(c.origin, t.tile.origin);
        }
    }

    #[test]
    fn calibration_set_labels_follow_planted_thresholds() {
        let set = generate_calibration_set(&CalibrationSynthSpec::new(75, 130, 1)).unwrap();
        assert_eq!(set.items.len(), 8);
        let mut profile = reference_profile();
        profile.value_left = 75.0;
        profile.value_right = 130.0;
        for item in &set.items {
            for a in &item.annotated {
                let m = classify_nucleus(&item.tile.image, &a.keypoint, &profile).unwrap();
                assert_eq!(m, a.label);
            }
        }
    }
}
