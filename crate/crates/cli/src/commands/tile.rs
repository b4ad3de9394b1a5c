use std::fmt::Write as _;
use std::path::Path;

use hscore_core::raster::RgbImage;
use hscore_core::tiling::cut_tiles;

use super::{comment_block, create_dir, tile_path, write_png, write_text, Context};
use crate::error::{CliError, CliResult};

pub const MANIFEST_HEADER: &str = "slide_id\ttile_id\torigin_x\torigin_y\tmicrons_per_pixel\tstatus\treason\tpath";

/// Cuts a raster into tiles, writes kept tiles as PNG and a manifest of
/// every tile with its filter verdict.
pub fn run(ctx: &Context, raster: &Path, mpp: f64, slide_id: Option<&str>, out: &Path) -> CliResult<usize> {
    if !(mpp.is_finite() && mpp > 0.0) {
        return Err(CliError::constraint(format!("--mpp must be positive, got {mpp}")));
    }
    let image = RgbImage::load(raster)?;
    let slide = match slide_id {
        Some(s) => s.to_string(),
        None => raster
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| CliError::input(format!("{}: cannot derive a slide id", raster.display())))?,
    };
    let cfg = &ctx.config;
    let tiles = cut_tiles(&image, &slide, mpp, cfg.tile_fov_um, cfg.tile_output_px)?;
    create_dir(out)?;
    let echo = ctx.echo_with(&[format!("raster={}", raster.display()), format!("source_mpp={mpp}")]);

    let mut manifest = comment_block(&echo);
    manifest.push_str(MANIFEST_HEADER);
    manifest.push('\n');
    for t in &tiles {
        let reason = cfg.filter.reason(&t.image);
        let (status, why, path) = match reason {
            Some(r) => ("filtered", r.to_string(), "-".to_string()),
            None => {
                let p = tile_path(out, &t.tile_id);
                write_png(&p, &t.image, &echo)?;
                ("kept", "-".to_string(), format!("{}.png", t.tile_id))
            }
        };
        let _ = writeln!(
            manifest,
            "{}\t{}\t{}\t{}\t{}\t{status}\t{why}\t{path}",
            t.slide_id, t.tile_id, t.origin.0, t.origin.1, t.microns_per_pixel
        );
    }
    write_text(&out.join("manifest.tsv"), &manifest)?;
    log::info!("{}: {} tiles", raster.display(), tiles.len());
    Ok(tiles.len())
}
