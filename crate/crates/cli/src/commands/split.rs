use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{comment_block, create_dir, write_text, Context};
use crate::error::{io_err, CliError, CliResult};

pub const PARTS: [&str; 3] = ["train", "val", "test"];

/// Part sizes for `n` items: every part but the first gets
/// `floor(n * ratio / sum)`, the first takes the rest.
pub fn part_sizes(n: usize, ratios: [u32; 3]) -> [usize; 3] {
    let sum: u64 = ratios.iter().map(|&r| r as u64).sum();
    let val = (n as u64 * ratios[1] as u64 / sum) as usize;
    let test = (n as u64 * ratios[2] as u64 / sum) as usize;
    [n - val - test, val, test]
}

/// Seeded shuffle of `n` indices split into train/val/test.
pub fn assign(n: usize, ratios: [u32; 3], seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let sizes = part_sizes(n, ratios);
    let mut part = vec![0usize; n];
    let mut cursor = 0;
    for (p, &size) in sizes.iter().enumerate() {
        for &i in &order[cursor..cursor + size] {
            part[i] = p;
        }
        cursor += size;
    }
    part
}

/// Partitions the kept rows of a tile manifest. Rows keep manifest order
/// inside each part.
pub fn run(ctx: &Context, manifest: &Path, ratios: [u32; 3], out: &Path) -> CliResult<[usize; 3]> {
    let text = std::fs::read_to_string(manifest).map_err(|e| io_err(manifest, e))?;
    let mut header: Option<&str> = None;
    let mut rows: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if header.is_none() {
            header = Some(line);
            continue;
        }
        rows.push(line);
    }
    let header = header.ok_or_else(|| CliError::input(format!("{}: manifest is empty", manifest.display())))?;
    let cols: Vec<&str> = header.split('\t').collect();
    let status_col = cols.iter().position(|c| *c == "status");
    for c in ["slide_id", "tile_id"] {
        if !cols.contains(&c) {
            return Err(CliError::input(format!("{}: manifest header lacks `{c}`", manifest.display())));
        }
    }
    let kept: Vec<&str> = rows
        .into_iter()
        .filter(|r| match status_col {
            Some(i) => r.split('\t').nth(i) == Some("kept"),
            None => true,
        })
        .collect();
    if kept.is_empty() {
        return Err(CliError::input(format!("{}: manifest lists no kept tiles", manifest.display())));
    }
    let part = assign(kept.len(), ratios, ctx.config.seed);
    create_dir(out)?;
    let echo = ctx.echo_with(&[format!("manifest={}", manifest.display())]);
    let mut counts = [0usize; 3];
    for (p, name) in PARTS.iter().enumerate() {
        let mut s = comment_block(&echo);
        s.push_str(&format!("# part={name}\n{header}\n"));
        for (row, _) in kept.iter().zip(&part).filter(|(_, &q)| q == p) {
            s.push_str(row);
            s.push('\n');
            counts[p] += 1;
        }
        write_text(&out.join(format!("{name}.tsv")), &s)?;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_follow_rounding_rule() {
        assert_eq!(part_sizes(5, [3, 1, 1]), [3, 1, 1]);
        assert_eq!(part_sizes(7, [3, 1, 1]), [5, 1, 1]);
        assert_eq!(part_sizes(10, [3, 1, 1]), [6, 2, 2]);
        assert_eq!(part_sizes(1, [3, 1, 1]), [1, 0, 0]);
    }

    #[test]
    fn assignment_is_seeded() {
        assert_eq!(assign(50, [3, 1, 1], 4), assign(50, [3, 1, 1], 4));
        assert_ne!(assign(50, [3, 1, 1], 4), assign(50, [3, 1, 1], 5));
    }
}
