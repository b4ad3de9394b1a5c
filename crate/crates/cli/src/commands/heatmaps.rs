//! `extract`, `fuse` and `render`: conversions between heatmaps and
//! keypoint files.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use hscore_core::fusion::fuse_keypoints;
use hscore_core::heatmap::Heatmap;
use hscore_core::keypoints::{extract_keypoints, render_heatmap, Compartment, Keypoint};
use hscore_core::tsv::{group_by_tile, read_keypoints, write_keypoints, KeypointRecord, TileKey};
use rayon::prelude::*;

use super::{comment_block, create_dir, parse_tile_stem, tile_stem, write_text, Context};
use crate::error::{CliError, CliResult};

fn records(key: &TileKey, kps: Vec<Keypoint>) -> Vec<KeypointRecord> {
    kps.into_iter()
        .map(|keypoint| KeypointRecord {
            slide_id: key.0.clone(),
            tile_id: key.1.clone(),
            keypoint,
            stain_label: None,
        })
        .collect()
}

/// Decodes heatmap files named `slide__tile.*` into one keypoint file.
/// Files are processed in path order.
pub fn extract(ctx: &Context, heatmaps: &[PathBuf], out: &Path) -> CliResult<usize> {
    if heatmaps.is_empty() {
        return Err(CliError::input("no heatmap files given"));
    }
    let params = ctx.config.extractor_params();
    let mut paths = heatmaps.to_vec();
    paths.sort();
    let per_file: Vec<Vec<KeypointRecord>> = paths
        .par_iter()
        .map(|p| {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| CliError::input(format!("{}: no file stem", p.display())))?;
            let hm = Heatmap::read(p)?;
            Ok(records(&parse_tile_stem(&stem), extract_keypoints(&hm, &params)?))
        })
        .collect::<CliResult<_>>()?;
    let all: Vec<KeypointRecord> = per_file.into_iter().flatten().collect();
    write_keypoints(out, &all, &ctx.echo_with(&[format!("heatmaps={}", paths.len())]))?;
    Ok(all.len())
}

/// Fuses several keypoint files tile by tile.
pub fn fuse(ctx: &Context, inputs: &[PathBuf], weights: &[f64], out: &Path) -> CliResult<usize> {
    if inputs.is_empty() {
        return Err(CliError::input("no keypoint files given"));
    }
    let weights: Vec<f64> = if weights.is_empty() { vec![1.0; inputs.len()] } else { weights.to_vec() };
    if weights.len() != inputs.len() {
        return Err(CliError::input(format!(
            "{} keypoint files but {} weights",
            inputs.len(),
            weights.len()
        )));
    }
    let sets = inputs
        .iter()
        .map(|p| read_keypoints(p).map(|r| group_by_tile(&r)))
        .collect::<Result<Vec<_>, _>>()?;
    let keys: BTreeSet<&TileKey> = sets.iter().flat_map(|s| s.keys()).collect();
    let keys: Vec<&TileKey> = keys.into_iter().collect();
    let radius = ctx.config.fuse_radius();
    let fused: Vec<Vec<KeypointRecord>> = keys
        .par_iter()
        .map(|k| {
            let per_model: Vec<Vec<Keypoint>> = sets
                .iter()
                .map(|s| s.get(*k).map(|v| v.iter().map(|r| r.keypoint).collect()).unwrap_or_default())
                .collect();
            Ok(records(k, fuse_keypoints(&per_model, &weights, radius)?))
        })
        .collect::<CliResult<_>>()?;
    let all: Vec<KeypointRecord> = fused.into_iter().flatten().collect();
    let mut extra: Vec<String> = inputs.iter().map(|p| format!("input={}", p.display())).collect();
    extra.push(format!(
        "weights={}",
        weights.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
    ));
    write_keypoints(out, &all, &ctx.echo_with(&extra))?;
    Ok(all.len())
}

/// Renders one two-class heatmap per tile of a keypoint file into `out`.
pub fn render(ctx: &Context, keypoints: &Path, size: u32, out: &Path) -> CliResult<usize> {
    let rows = read_keypoints(keypoints)?;
    let tiles = group_by_tile(&rows);
    create_dir(out)?;
    let sigma = ctx.config.render_sigma;
    let jobs: Vec<(&TileKey, &Vec<KeypointRecord>)> = tiles.iter().collect();
    jobs.par_iter()
        .map(|(k, recs)| {
            let kps: Vec<Keypoint> = recs.iter().map(|r| r.keypoint).collect();
            let hm = render_heatmap(&kps, size, size, &Compartment::ALL, sigma)
                .map_err(|e| CliError::from(e).prefixed(&format!("tile {}/{}", k.0, k.1)))?;
            hm.write(out.join(format!("{}.hmf", tile_stem(&k.0, &k.1))))?;
            Ok(())
        })
        .collect::<CliResult<Vec<()>>>()?;
    // the heatmap format has no room for metadata
    let echo = ctx.echo_with(&[
        format!("keypoints={}", keypoints.display()),
        format!("size={size}"),
        format!("tiles={}", tiles.len()),
    ]);
    write_text(&out.join("render.txt"), &comment_block(&echo))?;
    Ok(tiles.len())
}
