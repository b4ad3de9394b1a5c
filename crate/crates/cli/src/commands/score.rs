use std::fmt::Write as _;
use std::path::Path;

use hscore_core::calibration::load_profile;
use hscore_core::hscore::{score_tiles, HScoreReport};
use hscore_core::keypoints::{Compartment, Keypoint};
use hscore_core::stain::StainProfile;
use hscore_core::tiling::Tile;
use hscore_core::tsv::{group_by_tile, read_keypoints, TileKey};
use serde::Serialize;

use super::{fmt_opt, load_tiles, write_json, Context};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize)]
pub struct SlideReport {
    pub slide_id: String,
    pub report: HScoreReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreOutput {
    pub profile: StainProfile,
    pub slides: Vec<SlideReport>,
    pub pooled: HScoreReport,
}

impl ScoreOutput {
    /// One row per slide plus the pooled row: counts and H-score per
    /// compartment.
    pub fn format_table(&self) -> String {
        let mut s = String::from("slide");
        for c in Compartment::ALL {
            let _ = write!(s, "\t{c}_n\t{c}_hscore");
        }
        s.push('\n');
        let rows = self
            .slides
            .iter()
            .map(|r| (r.slide_id.as_str(), &r.report))
            .chain(std::iter::once(("pooled", &self.pooled)));
        for (id, r) in rows {
            s.push_str(id);
            for c in Compartment::ALL {
                let cs = r.compartment(c);
                let _ = write!(s, "\t{}\t{}", cs.counts.total(), fmt_opt(cs.hscore));
            }
            s.push('\n');
        }
        s
    }
}

/// Scores the tiles named in a keypoint file with a stain profile; reports
/// each slide and the pool of all tiles.
pub fn run(ctx: &Context, tiles_dir: &Path, keypoints: &Path, profile: Option<&Path>, out: &Path) -> CliResult<ScoreOutput> {
    let profile_path = profile
        .or(ctx.config.stain_profile.as_deref())
        .ok_or_else(|| CliError::input("a stain profile is required (--profile or stain.profile)"))?;
    let profile = load_profile(profile_path)?;
    let rows = read_keypoints(keypoints)?;
    let groups = group_by_tile(&rows);
    let keys: Vec<&TileKey> = groups.keys().collect();
    let tiles = load_tiles(tiles_dir, &keys, ctx.config.tile_fov_um)?;
    let items: Vec<(Tile, Vec<Keypoint>)> = tiles
        .into_iter()
        .zip(groups.values())
        .map(|(t, recs)| (t, recs.iter().map(|r| r.keypoint).collect()))
        .collect();

    let mut slides = Vec::new();
    let mut start = 0;
    while start < items.len() {
        let slide = items[start].0.slide_id.clone();
        let end = start + items[start..].iter().take_while(|(t, _)| t.slide_id == slide).count();
        slides.push(SlideReport {
            report: score_tiles(&items[start..end], &profile)?,
            slide_id: slide,
        });
        start = end;
    }
    let output = ScoreOutput {
        pooled: score_tiles(&items, &profile)?,
        slides,
        profile,
    };
    write_json(out, ctx, &output)?;
    Ok(output)
}
