use std::fmt::Write as _;
use std::path::Path;

use hscore_core::calibration::profile_to_string;
use hscore_core::hscore::{compute_hscore, ClassCounts};
use hscore_core::keypoints::Compartment;
use hscore_core::stain::StainClass;
use hscore_core::synth::{
    generate_calibration_set, generate_slide, CalibrationSynthSpec, SynthSlide, SynthSpec,
};
use hscore_core::tsv::{write_keypoints, KeypointRecord};
use rayon::prelude::*;

use super::{comment_block, create_dir, fmt_opt, tile_path, write_png, write_text, Context};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone)]
pub struct SynthArgs {
    /// `None` takes the bundle default.
    pub slides: Option<usize>,
    pub rows: u32,
    pub cols: u32,
    pub nuclei: usize,
    pub tile_size: u32,
    pub compartment_mix: [f64; 2],
    pub class_mix: [f64; 4],
    pub radius: u32,
    pub min_separation: f64,
    /// Planted `(left, right)` thresholds; switches to a calibration bundle.
    pub calibration: Option<(u8, u8)>,
    pub tiles_per_slide: usize,
}

impl Default for SynthArgs {
    fn default() -> Self {
        let d = SynthSpec::default();
        Self {
            slides: None,
            rows: 1,
            cols: 1,
            nuclei: d.nuclei,
            tile_size: d.tile_size,
            compartment_mix: d.compartment_mix,
            class_mix: d.class_mix,
            radius: d.nucleus_radius_px,
            min_separation: d.min_separation_px,
            calibration: None,
            tiles_per_slide: 2,
        }
    }
}

impl SynthArgs {
    pub fn spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            tile_size: self.tile_size,
            nuclei: self.nuclei,
            compartment_mix: self.compartment_mix,
            class_mix: self.class_mix,
            nucleus_radius_px: self.radius,
            min_separation_px: self.min_separation,
            seed,
            ..SynthSpec::default()
        }
    }

    pub fn slide_count(&self) -> usize {
        self.slides.unwrap_or(if self.calibration.is_some() { 4 } else { 1 })
    }

    fn echo(&self) -> Vec<String> {
        let mut v = vec![
            format!("synth.slides={}", self.slide_count()),
            format!("synth.tile_size={}", self.tile_size),
            format!("synth.radius={}", self.radius),
            format!("synth.min_separation={}", self.min_separation),
        ];
        match self.calibration {
            Some((l, r)) => {
                v.push(format!("synth.planted_left={l}"));
                v.push(format!("synth.planted_right={r}"));
                v.push(format!("synth.tiles_per_slide={}", self.tiles_per_slide));
            }
            None => {
                v.push(format!("synth.rows={}", self.rows));
                v.push(format!("synth.cols={}", self.cols));
                v.push(format!("synth.nuclei={}", self.nuclei));
                v.push(format!("synth.compartment_mix={:?}", self.compartment_mix));
                v.push(format!("synth.class_mix={:?}", self.class_mix));
            }
        }
        v
    }
}

fn counts_cells(counts: &ClassCounts) -> String {
    let mut s = String::new();
    for c in Compartment::ALL {
        let k = counts.compartment(c);
        for class in StainClass::ALL {
            let _ = write!(s, "\t{}", k.get(class));
        }
        let _ = write!(s, "\t{}", fmt_opt(compute_hscore(k)));
    }
    s
}

/// Expected-values sidecar: counts and analytic H-scores per tile, per
/// slide and pooled.
pub fn expected_table(slides: &[SynthSlide]) -> String {
    let mut s = String::from("scope\tid");
    for c in Compartment::ALL {
        for class in StainClass::ALL {
            let _ = write!(s, "\t{c}_{class}");
        }
        let _ = write!(s, "\t{c}_hscore");
    }
    s.push('\n');
    let mut pooled = ClassCounts::default();
    for slide in slides {
        let mut per_slide = ClassCounts::default();
        for t in &slide.tiles {
            let _ = writeln!(s, "tile\t{}{}", t.tile.tile_id, counts_cells(&t.counts));
            per_slide = per_slide.merge(t.counts);
        }
        let _ = writeln!(s, "slide\t{}{}", slide.slide_id, counts_cells(&per_slide));
        pooled = pooled.merge(per_slide);
    }
    let _ = writeln!(s, "pooled\tall{}", counts_cells(&pooled));
    s
}

fn labeled_records(slide: &str, tile: &str, kps: &[hscore_core::LabeledKeypoint], labels: bool) -> Vec<KeypointRecord> {
    kps.iter()
        .map(|k| KeypointRecord {
            slide_id: slide.to_string(),
            tile_id: tile.to_string(),
            keypoint: k.keypoint,
            stain_label: labels.then_some(k.label),
        })
        .collect()
}

/// Writes an oracle bundle into `out`.
pub fn run(ctx: &Context, args: &SynthArgs, out: &Path) -> CliResult<()> {
    let seed = ctx.config.seed;
    let echo = ctx.echo_with(&args.echo());
    let tiles_dir = out.join("tiles");
    create_dir(&tiles_dir)?;
    if let Some((l, r)) = args.calibration {
        let mut spec = CalibrationSynthSpec::new(l, r, seed);
        spec.base.tile_size = args.tile_size;
        spec.base.nucleus_radius_px = args.radius;
        spec.base.min_separation_px = args.min_separation;
        spec.slides = args.slide_count();
        spec.tiles_per_slide = args.tiles_per_slide;
        let set = generate_calibration_set(&spec)?;
        set.items
            .par_iter()
            .map(|i| write_png(&tile_path(&tiles_dir, &i.tile.tile_id), &i.tile.image, &echo))
            .collect::<CliResult<Vec<()>>>()?;
        let mut ann = Vec::new();
        for i in &set.items {
            ann.extend(labeled_records(&i.tile.slide_id, &i.tile.tile_id, &i.annotated, true));
        }
        let pred: Vec<KeypointRecord> = ann.iter().map(|r| KeypointRecord { stain_label: None, ..r.clone() }).collect();
        write_keypoints(out.join("annotations.tsv"), &ann, &echo)?;
        write_keypoints(out.join("predictions.tsv"), &pred, &echo)?;
        let mut reference = spec.base.reference.clone();
        reference.value_left = l as f64;
        reference.value_right = r as f64;
        reference.annotator_id = spec.annotator_id.clone();
        let planted = format!(
            "{}value_left={l}\nvalue_right={r}\nhue_split_deg={}\nbrown_hue_deg={}\nnucleus_half_side_px={}\n",
            comment_block(&echo),
            reference.hue_split_deg,
            reference.brown_hue_deg,
            reference.nucleus_half_side_px
        );
        write_text(&out.join("planted.txt"), &planted)?;
        return Ok(());
    }

    let spec = args.spec(seed);
    let n_slides = args.slide_count();
    if n_slides == 0 {
        return Err(CliError::constraint("synth needs at least one slide"));
    }
    let rasters_dir = out.join("rasters");
    create_dir(&rasters_dir)?;
    let mut slides = Vec::with_capacity(n_slides);
    for s in 0..n_slides {
        let id = format!("slide{s:03}");
        slides.push(generate_slide(&spec, s as u64, &id, args.rows, args.cols)?);
    }
    let mut manifest = comment_block(&echo);
    manifest.push_str("slide_id\traster\tmicrons_per_pixel\n");
    let mut records = Vec::new();
    for slide in &slides {
        write_png(&rasters_dir.join(format!("{}.png", slide.slide_id)), &slide.raster, &echo)?;
        let _ = writeln!(manifest, "{}\trasters/{}.png\t{}", slide.slide_id, slide.slide_id, slide.microns_per_pixel);
        slide
            .tiles
            .par_iter()
            .map(|t| write_png(&tile_path(&tiles_dir, &t.tile.tile_id), &t.tile.image, &echo))
            .collect::<CliResult<Vec<()>>>()?;
        for t in &slide.tiles {
            records.extend(labeled_records(&slide.slide_id, &t.tile.tile_id, &t.keypoints, true));
        }
    }
    write_text(&out.join("slides.tsv"), &manifest)?;
    write_keypoints(out.join("keypoints.tsv"), &records, &echo)?;
    write_text(&out.join("expected.tsv"), &(comment_block(&echo) + &expected_table(&slides)))?;
    write_text(
        &out.join("reference_profile.txt"),
        &(comment_block(&echo) + &profile_to_string(&spec.reference)),
    )?;
    Ok(())
}
