use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use hscore_core::calibration::{
    calibrate, leave_one_slide_out, profile_to_string, CalibrationItem, CalibrationParams, CalibrationResult,
    CalibrationSet, LabeledKeypoint, LosoFold,
};
use hscore_core::stain::{estimate_hue_split, measure_nucleus, StainClass};
use hscore_core::tsv::{group_by_tile, read_keypoints, TileKey};
use rayon::prelude::*;

use super::{comment_block, fmt_opt, load_tiles, write_text, Context};
use crate::error::{CliError, CliResult};

pub struct CalibrateArgs<'a> {
    pub tiles_dir: &'a Path,
    pub annotations: &'a Path,
    pub predictions: &'a Path,
    pub annotator: Option<&'a str>,
    pub loso: Option<&'a Path>,
    pub created_utc: Option<&'a str>,
    pub out: &'a Path,
}

/// Creation stamp: explicit value, else `SOURCE_DATE_EPOCH`, else now.
pub fn creation_stamp(explicit: Option<&str>) -> CliResult<String> {
    if let Some(s) = explicit {
        return Ok(s.to_string());
    }
    let when = match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => {
            let secs: i64 = v
                .trim()
                .parse()
                .map_err(|_| CliError::input(format!("SOURCE_DATE_EPOCH is not an integer: {v:?}")))?;
            chrono::DateTime::from_timestamp(secs, 0)
                .ok_or_else(|| CliError::input(format!("SOURCE_DATE_EPOCH out of range: {secs}")))?
        }
        Err(_) => chrono::Utc::now(),
    };
    Ok(when.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
}

/// Builds the calibration set from tile images, labelled annotations and
/// model keypoints. Tiles named by either file take part.
pub fn load_set(ctx: &Context, args: &CalibrateArgs) -> CliResult<CalibrationSet> {
    let ann = group_by_tile(&read_keypoints(args.annotations)?);
    let pred = group_by_tile(&read_keypoints(args.predictions)?);
    for recs in ann.values() {
        if let Some(r) = recs.iter().find(|r| r.stain_label.is_none()) {
            return Err(CliError::input(format!(
                "{}: annotation in tile {}/{} lacks a stain label",
                args.annotations.display(),
                r.slide_id,
                r.tile_id
            )));
        }
    }
    let keys: BTreeSet<&TileKey> = ann.keys().chain(pred.keys()).collect();
    let keys: Vec<&TileKey> = keys.into_iter().collect();
    let tiles = load_tiles(args.tiles_dir, &keys, ctx.config.tile_fov_um)?;
    let items = tiles
        .into_iter()
        .zip(&keys)
        .map(|(tile, k)| CalibrationItem {
            tile,
            annotated: ann
                .get(*k)
                .map(|v| {
                    v.iter()
                        .map(|r| LabeledKeypoint {
                            keypoint: r.keypoint,
                            label: r.stain_label.expect("checked above"),
                        })
                        .collect()
                })
                .unwrap_or_default(),
            predicted: pred.get(*k).map(|v| v.iter().map(|r| r.keypoint).collect()).unwrap_or_default(),
        })
        .collect();
    Ok(CalibrationSet {
        annotator_id: args.annotator.unwrap_or("annotator").to_string(),
        items,
    })
}

/// Hue split and brown reference: configured values, or the histogram-peak
/// estimate over annotated nuclei (unstained versus stained labels).
pub fn hue_orientation(ctx: &Context, set: &CalibrationSet, half_side: u32) -> CliResult<(f64, f64)> {
    let cfg = &ctx.config;
    if let (Some(split), Some(brown)) = (cfg.calibration_hue_split_deg, cfg.calibration_brown_hue_deg) {
        return Ok((split, brown));
    }
    let measured: Vec<(StainClass, f64)> = set
        .items
        .par_iter()
        .map(|item| {
            item.annotated
                .iter()
                .map(|a| Ok((a.label, measure_nucleus(&item.tile.image, &a.keypoint, half_side)?.hue)))
                .collect::<CliResult<Vec<_>>>()
        })
        .collect::<CliResult<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let blue: Vec<f64> = measured.iter().filter(|(l, _)| *l == StainClass::None).map(|m| m.1).collect();
    let brown: Vec<f64> = measured.iter().filter(|(l, _)| *l != StainClass::None).map(|m| m.1).collect();
    if blue.is_empty() || brown.is_empty() {
        return Err(CliError::constraint(
            "hue split estimation needs both unstained and stained annotations; set calibration.hue_split_deg",
        ));
    }
    let est = estimate_hue_split(&blue, &brown)?;
    Ok((
        cfg.calibration_hue_split_deg.unwrap_or(est.split_deg),
        cfg.calibration_brown_hue_deg.unwrap_or(est.brown_peak_deg),
    ))
}

pub fn format_loso(folds: &[LosoFold]) -> String {
    let mut s = String::from(
        "held_out_slide\tvalue_left\tvalue_right\ttrain_objective\tmanual_stroma\tmodel_stroma\tmanual_epithelium\tmodel_epithelium\n",
    );
    for f in folds {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            f.held_out_slide,
            f.value_left,
            f.value_right,
            f.train_objective,
            fmt_opt(f.manual[0]),
            fmt_opt(f.model[0]),
            fmt_opt(f.manual[1]),
            fmt_opt(f.model[1])
        );
    }
    s
}

/// Fits the annotator profile and writes it; optionally runs the
/// leave-one-slide-out protocol.
pub fn run(ctx: &Context, args: &CalibrateArgs) -> CliResult<CalibrationResult> {
    let set = load_set(ctx, args)?;
    let half_side = ctx.config.half_side_px();
    let (split, brown) = hue_orientation(ctx, &set, half_side)?;
    let params = CalibrationParams {
        grid: ctx.config.calibration_grid,
        hue_split_deg: split,
        brown_hue_deg: brown,
        nucleus_half_side_px: half_side,
    };
    let mut result = calibrate(&set, &params)?;
    result.profile.created_utc = creation_stamp(args.created_utc)?;
    let echo = ctx.echo_with(&[
        format!("tiles={}", args.tiles_dir.display()),
        format!("annotations={}", args.annotations.display()),
        format!("predictions={}", args.predictions.display()),
        format!("pairs_evaluated={}", result.pairs_evaluated),
    ]);
    write_text(args.out, &(comment_block(&echo) + &profile_to_string(&result.profile)))?;
    if let Some(loso_path) = args.loso {
        let folds = leave_one_slide_out(&set, &params)?;
        write_text(loso_path, &(comment_block(&echo) + &format_loso(&folds)))?;
    }
    Ok(result)
}
