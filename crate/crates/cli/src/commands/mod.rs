//! Subcommand implementations and the helpers they share.

pub mod calibrate;
pub mod eval;
pub mod heatmaps;
pub mod score;
pub mod split;
pub mod synth;
pub mod tile;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use hscore_core::raster::RgbImage;
use hscore_core::tiling::Tile;
use hscore_core::tsv::TileKey;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{io_err, CliError, CliResult};

pub const TOOL: &str = concat!("hscore ", env!("CARGO_PKG_VERSION"));

/// Resolved state shared by every command.
pub struct Context {
    pub config: PipelineConfig,
    pub command: &'static str,
}

impl Context {
    /// Tool version, command and resolved configuration, one item per line.
    pub fn echo(&self) -> Vec<String> {
        let mut v = vec![TOOL.to_string(), format!("command={}", self.command)];
        v.extend(self.config.echo());
        v
    }

    /// Echo plus command-specific lines, ready for `# ` comment headers.
    pub fn echo_with(&self, extra: &[String]) -> Vec<String> {
        let mut v = self.echo();
        v.extend(extra.iter().cloned());
        v
    }
}

/// JSON envelope written by report-producing commands.
#[derive(Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub tool: &'static str,
    pub command: &'a str,
    pub config: Vec<String>,
    #[serde(flatten)]
    pub body: T,
}

pub fn require_out(out: &Option<PathBuf>) -> CliResult<&Path> {
    out.as_deref().ok_or_else(|| CliError::input("--out is required for this command"))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, ctx: &Context, body: T) -> CliResult<()> {
    let env = Envelope {
        tool: TOOL,
        command: ctx.command,
        config: ctx.echo(),
        body,
    };
    let mut text = serde_json::to_string_pretty(&env).map_err(|e| CliError::constraint(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

/// Lines prefixed with `# `.
pub fn comment_block(lines: &[String]) -> String {
    lines.iter().map(|l| format!("# {l}\n")).collect()
}

/// Writes an 8-bit RGB PNG with the echo stored in a `tEXt` chunk.
pub fn write_png(path: &Path, image: &RgbImage, echo: &[String]) -> CliResult<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), image.width(), image.height());
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| CliError::input(format!("{}: {e}", path.display()));
    enc.add_text_chunk("hscore".into(), echo.join("\n")).map_err(png_err)?;
    let mut w = enc.write_header().map_err(png_err)?;
    w.write_image_data(image.as_raw()).map_err(png_err)?;
    w.finish().map_err(png_err)
}

/// Tile image file for a tile id inside a tiles directory.
pub fn tile_path(dir: &Path, tile_id: &str) -> PathBuf {
    dir.join(format!("{tile_id}.png"))
}

/// Loads the tile images for `keys` from `dir`, in key order.
pub fn load_tiles(dir: &Path, keys: &[&TileKey], fov_um: f64) -> CliResult<Vec<Tile>> {
    keys.par_iter()
        .map(|(slide, tile)| {
            let image = RgbImage::load(tile_path(dir, tile))?;
            let mpp = fov_um / image.width() as f64;
            Ok(Tile::new(tile.clone(), slide.clone(), image, mpp, (0, 0))?)
        })
        .collect()
}

/// `slide__tile` file stem of a per-tile artifact.
pub fn tile_stem(slide: &str, tile: &str) -> String {
    format!("{slide}__{tile}")
}

/// Inverse of [`tile_stem`]; a stem without `__` names both ids.
pub fn parse_tile_stem(stem: &str) -> TileKey {
    match stem.split_once("__") {
        Some((s, t)) => (s.to_string(), t.to_string()),
        None => (stem.to_string(), stem.to_string()),
    }
}

/// Formats an optional H-score for text tables.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_else(|| "NA".into())
}
