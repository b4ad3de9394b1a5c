use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keypoints::{by_confidence_desc, Compartment, Keypoint};

/// Matching settings for keypoint detection metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Euclidean distance (px) within which a prediction can claim a ground truth.
    pub match_radius: f64,
    /// Tiles per batch for per-batch metrics.
    pub batch_size: usize,
}

impl EvalConfig {
    pub fn with_nucleus_radius(nucleus_radius_px: f64) -> Self {
        Self {
            match_radius: nucleus_radius_px,
            batch_size: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.match_radius.is_finite() && self.match_radius > 0.0) {
            return Err(Error::domain("match radius must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch size must be positive"));
        }
        Ok(())
    }
}

/// A ranked prediction and, when it is a true positive, the index of the
/// ground truth it claimed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Outcome {
    pub confidence: f64,
    pub matched_gt: Option<usize>,
}

impl Outcome {
    pub fn is_tp(&self) -> bool {
        self.matched_gt.is_some()
    }
}

/// Ranked outcomes for one class plus its ground-truth count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMatch {
    pub class: Compartment,
    /// Descending confidence.
    pub outcomes: Vec<Outcome>,
    pub n_gt: usize,
}

impl ClassMatch {
    pub fn true_positives(&self) -> usize {
        self.outcomes.iter().filter(|o| o.is_tp()).count()
    }

    pub fn false_positives(&self) -> usize {
        self.outcomes.len() - self.true_positives()
    }

    pub fn false_negatives(&self) -> usize {
        self.n_gt - self.true_positives()
    }

    /// Pools several class matches (e.g. one per tile) into one ranking.
    /// Equal confidences keep their input order.
    pub fn pooled<'a>(class: Compartment, parts: impl IntoIterator<Item = &'a ClassMatch>) -> ClassMatch {
        let mut outcomes = Vec::new();
        let mut n_gt = 0;
        for p in parts {
            debug_assert_eq!(p.class, class);
            outcomes.extend_from_slice(&p.outcomes);
            n_gt += p.n_gt;
        }
        outcomes.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        ClassMatch {
            class,
            outcomes,
            n_gt,
        }
    }
}

/// Per-class matching of one tile, ordered like [`Compartment::ALL`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub classes: Vec<ClassMatch>,
}

impl MatchResult {
    pub fn class(&self, c: Compartment) -> &ClassMatch {
        &self.classes[c.index()]
    }
}

/// Greedy matching: predictions in descending confidence each take the
/// nearest unmatched same-class ground truth within `match_radius`.
pub fn match_keypoints(pred: &[Keypoint], gt: &[Keypoint], match_radius: f64) -> MatchResult {
    let limit = match_radius * match_radius;
    let classes = Compartment::ALL
        .iter()
        .map(|&class| {
            let mut preds: Vec<&Keypoint> = pred.iter().filter(|k| k.class == class).collect();
            preds.sort_by(|a, b| by_confidence_desc(a, b));
            let gts: Vec<(usize, &Keypoint)> =
                gt.iter().enumerate().filter(|(_, k)| k.class == class).collect();
            let mut taken = vec![false; gts.len()];
            let outcomes = preds
                .iter()
                .map(|p| {
                    let mut best: Option<(usize, f64)> = None;
                    for (slot, (_, g)) in gts.iter().enumerate() {
                        if taken[slot] {
                            continue;
                        }
                        let d = p.distance_sq(g);
                        if d <= limit && best.is_none_or(|(_, bd)| d < bd) {
                            best = Some((slot, d));
                        }
                    }
                    Outcome {
                        confidence: p.confidence,
                        matched_gt: best.map(|(slot, _)| {
                            taken[slot] = true;
                            gts[slot].0
                        }),
                    }
                })
                .collect();
            ClassMatch {
                class,
                outcomes,
                n_gt: gts.len(),
            }
        })
        .collect();
    MatchResult { classes }
}
