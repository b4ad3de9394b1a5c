//! Detector evaluation: keypoint matching, AP/mAP, per-batch series and
//! paired bootstrap comparison of two detectors.

mod ap;
mod bootstrap;
mod matching;

pub use ap::{average_precision, mean_ap};
pub use bootstrap::{
    bootstrap_ci, inner_interval, percentile_ranks, repeat_rng, BootstrapCi, BootstrapConfig, InnerInterval,
};
pub use matching::{match_keypoints, ClassMatch, EvalConfig, MatchResult, Outcome};

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::keypoints::{Compartment, Keypoint};
use crate::tsv::{KeypointRecord, TileKey};

type MetricFn = fn(&BatchMetrics) -> Option<f64>;

/// Interpolation scheme named in every report.
pub const AP_INTERPOLATION: &str = "all-point";

/// Pooled AP of one class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAp {
    pub class: Compartment,
    pub ap: Option<f64>,
    pub n_gt: usize,
    pub n_pred: usize,
    pub true_positives: usize,
}

/// Metrics of one batch of tiles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchMetrics {
    pub index: usize,
    pub tiles: usize,
    /// Indexed like [`Compartment::ALL`].
    pub ap: [Option<f64>; 2],
    pub map: Option<f64>,
}

/// Metrics of one prediction set against the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub interpolation: &'static str,
    pub config: EvalConfig,
    pub tiles: usize,
    pub classes: Vec<ClassAp>,
    pub map: f64,
    pub batches: Vec<BatchMetrics>,
    /// Mean of the defined batch mAPs.
    pub batch_mean_map: Option<f64>,
}

/// CI row for one metric of a paired comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CiRow {
    pub metric: String,
    pub lower: f64,
    pub upper: f64,
    pub mean: f64,
    /// Per-batch differences `primary - baseline` the interval was drawn from.
    pub diffs: Vec<f64>,
}

/// Paired comparison of a primary detector against a baseline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub primary: EvalReport,
    pub baseline: EvalReport,
    pub bootstrap: BootstrapConfig,
    pub rows: Vec<CiRow>,
}

impl Comparison {
    /// Table of the form `metric | lower bound | upper bound`.
    pub fn format_table(&self) -> String {
        let mut s = String::from("Confidence interval for mean difference (primary - baseline)\n");
        s.push_str(&format!("{:<16}{:>14}{:>14}\n", "Metric", "Lower bound", "Upper bound"));
        for r in &self.rows {
            s.push_str(&format!("{:<16}{:>14.5}{:>14.5}\n", r.metric, r.lower, r.upper));
        }
        s
    }
}

fn to_keypoints(records: &[KeypointRecord]) -> Vec<Keypoint> {
    records.iter().map(|r| r.keypoint).collect()
}

/// Matches every ground-truth tile, in key order. Tiles in `pred` that are
/// absent from `gt` are an alignment error.
fn match_tiles(
    gt: &BTreeMap<TileKey, Vec<KeypointRecord>>,
    pred: &BTreeMap<TileKey, Vec<KeypointRecord>>,
    cfg: &EvalConfig,
) -> Result<Vec<MatchResult>> {
    let offenders: Vec<String> = pred
        .keys()
        .filter(|k| !gt.contains_key(*k))
        .map(|(s, t)| format!("{s}/{t}"))
        .collect();
    if !offenders.is_empty() {
        return Err(Error::Alignment { offenders });
    }
    let keys: Vec<&TileKey> = gt.keys().collect();
    Ok(keys
        .par_iter()
        .map(|k| {
            let p = pred.get(*k).map(|v| to_keypoints(v)).unwrap_or_default();
            match_keypoints(&p, &to_keypoints(&gt[*k]), cfg.match_radius)
        })
        .collect())
}

fn pooled_aps(tiles: &[MatchResult]) -> Vec<(ClassMatch, Option<f64>)> {
    Compartment::ALL
        .iter()
        .map(|&c| {
            let m = ClassMatch::pooled(c, tiles.iter().map(|t| t.class(c)));
            let ap = average_precision(&m);
            (m, ap)
        })
        .collect()
}

fn defined_mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn report_from_matches(tiles: &[MatchResult], cfg: &EvalConfig) -> Result<EvalReport> {
    let pooled = pooled_aps(tiles);
    let per_class: Vec<(Compartment, Option<f64>)> = pooled.iter().map(|(m, ap)| (m.class, *ap)).collect();
    let map = mean_ap(&per_class)?;
    let batches: Vec<BatchMetrics> = tiles
        .chunks(cfg.batch_size)
        .enumerate()
        .map(|(index, chunk)| {
            let aps = pooled_aps(chunk);
            let ap = [aps[0].1, aps[1].1];
            BatchMetrics {
                index,
                tiles: chunk.len(),
                ap,
                map: defined_mean(ap.into_iter()),
            }
        })
        .collect();
    Ok(EvalReport {
        interpolation: AP_INTERPOLATION,
        config: *cfg,
        tiles: tiles.len(),
        classes: pooled
            .iter()
            .map(|(m, ap)| ClassAp {
                class: m.class,
                ap: *ap,
                n_gt: m.n_gt,
                n_pred: m.outcomes.len(),
                true_positives: m.true_positives(),
            })
            .collect(),
        map,
        batch_mean_map: defined_mean(batches.iter().map(|b| b.map)),
        batches,
    })
}

/// Evaluates predictions against ground truth.
///
/// The ground-truth tiles define the tile universe and the batch order
/// (sorted by slide id, then tile id).
pub fn evaluate(gt: &[KeypointRecord], pred: &[KeypointRecord], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let gt_tiles = crate::tsv::group_by_tile(gt);
    let matches = match_tiles(&gt_tiles, &crate::tsv::group_by_tile(pred), cfg)?;
    report_from_matches(&matches, cfg)
}

/// Evaluates two detectors on the same tiles and bootstraps the per-batch
/// paired differences `primary - baseline` of each class AP and of mAP.
/// Batches where a metric is undefined for either side are skipped for that
/// metric.
pub fn compare(
    gt: &[KeypointRecord],
    primary: &[KeypointRecord],
    baseline: &[KeypointRecord],
    cfg: &EvalConfig,
    boot: &BootstrapConfig,
) -> Result<Comparison> {
    boot.validate()?;
    let p = evaluate(gt, primary, cfg)?;
    let b = evaluate(gt, baseline, cfg)?;
    let metrics: [(String, MetricFn); 3] = [
        (format!("{} AP", title(Compartment::Stroma)), |m| m.ap[0]),
        (format!("{} AP", title(Compartment::Epithelium)), |m| m.ap[1]),
        ("mAP".to_string(), |m| m.map),
    ];
    let mut rows = Vec::new();
    for (metric, get) in metrics {
        let diffs: Vec<f64> = p
            .batches
            .iter()
            .zip(&b.batches)
            .filter_map(|(x, y)| Some(get(x)? - get(y)?))
            .collect();
        if diffs.is_empty() {
            log::warn!("{metric}: no batch defines it for both detectors; row omitted");
            continue;
        }
        let ci = bootstrap_ci(&diffs, boot)?;
        rows.push(CiRow {
            metric,
            lower: ci.lower,
            upper: ci.upper,
            mean: ci.mean,
            diffs,
        });
    }
    if rows.is_empty() {
        return Err(Error::Evaluation("no metric is defined on any batch".into()));
    }
    Ok(Comparison {
        primary: p,
        baseline: b,
        bootstrap: *boot,
        rows,
    })
}

fn title(c: Compartment) -> String {
    let s = c.as_str();
    s[..1].to_uppercase() + &s[1..]
}

/// Distinct tile keys present in a record set.
pub fn tile_keys(records: &[KeypointRecord]) -> BTreeSet<TileKey> {
    records.iter().map(KeypointRecord::key).collect()
}
