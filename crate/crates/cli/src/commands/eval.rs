use std::fmt::Write as _;
use std::path::Path;

use hscore_core::evaluation::{compare, evaluate, Comparison, EvalReport};
use hscore_core::tsv::read_keypoints;
use serde::Serialize;

use super::{fmt_opt, write_json, Context};
use crate::error::CliResult;

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum EvalOutput {
    Single { report: EvalReport },
    Paired { comparison: Comparison, table: String },
}

/// Per-class AP, mAP and the batch series as a text table.
pub fn format_report(r: &EvalReport) -> String {
    let mut s = format!("interpolation={}\nmatch_radius={}\n", r.interpolation, r.config.match_radius);
    for c in &r.classes {
        let _ = writeln!(s, "{} AP\t{}\t(gt={}, pred={}, tp={})", c.class, fmt_opt(c.ap), c.n_gt, c.n_pred, c.true_positives);
    }
    let _ = writeln!(s, "mAP\t{}", r.map);
    let _ = writeln!(s, "batches={} (size {}), mean batch mAP {}", r.batches.len(), r.config.batch_size, fmt_opt(r.batch_mean_map));
    s
}

/// Evaluates predictions against ground truth; with a baseline, bootstraps
/// the per-batch differences `pred - baseline`.
pub fn run(ctx: &Context, gt: &Path, pred: &Path, baseline: Option<&Path>, out: &Path) -> CliResult<EvalOutput> {
    let gt_rows = read_keypoints(gt)?;
    let pred_rows = read_keypoints(pred)?;
    let cfg = ctx.config.eval_config();
    let output = match baseline {
        None => EvalOutput::Single {
            report: evaluate(&gt_rows, &pred_rows, &cfg)?,
        },
        Some(b) => {
            let base_rows = read_keypoints(b)?;
            let comparison = compare(&gt_rows, &pred_rows, &base_rows, &cfg, &ctx.config.bootstrap_config())?;
            EvalOutput::Paired {
                table: comparison.format_table(),
                comparison,
            }
        }
    };
    write_json(out, ctx, &output)?;
    Ok(output)
}
