//! Weighted fusion of keypoint sets predicted by several models.
//!
//! Boxes reduce to centers here, so overlap matching becomes a radius test.

use crate::error::{Error, Result};
use crate::keypoints::{by_confidence_desc, Compartment, Keypoint};

struct Cluster {
    members: Vec<(usize, Keypoint)>,
    x: f64,
    y: f64,
}

impl Cluster {
    fn new(model: usize, kp: Keypoint) -> Self {
        Self {
            members: vec![(model, kp)],
            x: kp.x,
            y: kp.y,
        }
    }

    fn push(&mut self, model: usize, kp: Keypoint, weights: &[f64]) {
        self.members.push((model, kp));
        let (x, y) = self.weighted_center(weights);
        self.x = x;
        self.y = y;
    }

    /// Mean of member positions weighted by `confidence * model weight`,
    /// anchored on the first member so coincident points stay exact.
    fn weighted_center(&self, weights: &[f64]) -> (f64, f64) {
        let (_, anchor) = self.members[0];
        let mut total = 0.0;
        let (mut sx, mut sy) = (0.0, 0.0);
        for &(m, kp) in &self.members {
            let w = kp.confidence * weights[m];
            total += w;
            sx += w * (kp.x - anchor.x);
            sy += w * (kp.y - anchor.y);
        }
        if total > 0.0 {
            (anchor.x + sx / total, anchor.y + sy / total)
        } else {
            let n = self.members.len() as f64;
            let mx: f64 = self.members.iter().map(|(_, k)| k.x - anchor.x).sum();
            let my: f64 = self.members.iter().map(|(_, k)| k.y - anchor.y).sum();
            (anchor.x + mx / n, anchor.y + my / n)
        }
    }

    /// Weighted mean over member models of each model's best confidence.
    fn fused_confidence(&self, weights: &[f64]) -> f64 {
        let mut best: Vec<(usize, f64)> = Vec::new();
        for &(m, kp) in &self.members {
            match best.iter_mut().find(|(bm, _)| *bm == m) {
                Some((_, c)) => *c = c.max(kp.confidence),
                None => best.push((m, kp.confidence)),
            }
        }
        let anchor = best[0].1;
        let (mut num, mut den) = (0.0, 0.0);
        for &(m, c) in &best {
            num += weights[m] * (c - anchor);
            den += weights[m];
        }
        (anchor + num / den).clamp(0.0, 1.0)
    }
}

/// Fuses keypoints from several models.
///
/// Per class, keypoints from all sets are visited by descending confidence;
/// each joins the first cluster whose current fused center lies within
/// `fuse_radius`, or opens a new one. Output is sorted by class, then
/// descending confidence, then `(y, x)`.
pub fn fuse_keypoints(
    sets: &[Vec<Keypoint>],
    model_weights: &[f64],
    fuse_radius: f64,
) -> Result<Vec<Keypoint>> {
    if sets.len() != model_weights.len() {
        return Err(Error::domain(format!(
            "{} keypoint sets but {} model weights",
            sets.len(),
            model_weights.len()
        )));
    }
    if let Some(w) = model_weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::domain(format!("model weights must be positive, got {w}")));
    }
    if !(fuse_radius >= 0.0 && fuse_radius.is_finite()) {
        return Err(Error::domain("fuse radius must be a finite value >= 0"));
    }
    let radius_sq = fuse_radius * fuse_radius;

    let mut fused = Vec::new();
    for class in Compartment::ALL {
        let mut items: Vec<(usize, Keypoint)> = sets
            .iter()
            .enumerate()
            .flat_map(|(m, set)| set.iter().filter(|k| k.class == class).map(move |&k| (m, k)))
            .collect();
        items.sort_by(|a, b| by_confidence_desc(&a.1, &b.1).then(a.0.cmp(&b.0)));

        let mut clusters: Vec<Cluster> = Vec::new();
        for (m, kp) in items {
            let hit = clusters.iter_mut().find(|c| {
                let (dx, dy) = (c.x - kp.x, c.y - kp.y);
                dx * dx + dy * dy <= radius_sq
            });
            match hit {
                Some(c) => c.push(m, kp, model_weights),
                None => clusters.push(Cluster::new(m, kp)),
            }
        }
        fused.extend(
            clusters
                .iter()
                .map(|c| Keypoint::new(c.x, c.y, class, c.fused_confidence(model_weights))),
        );
    }
    fused.sort_by(|a, b| a.class.cmp(&b.class).then(by_confidence_desc(a, b)));
    Ok(fused)
}
