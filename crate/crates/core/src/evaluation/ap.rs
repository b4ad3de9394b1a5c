use crate::error::{Error, Result};
use crate::keypoints::Compartment;

use super::matching::ClassMatch;

/// All-point interpolated average precision.
///
/// Each true positive adds `1 / n_gt` of recall at the envelope precision,
/// i.e. the best precision reached at that rank or any later one.
/// `None` when the class has no ground truth.
pub fn average_precision(m: &ClassMatch) -> Option<f64> {
    if m.n_gt == 0 {
        return None;
    }
    let mut precision = Vec::with_capacity(m.outcomes.len());
    let mut tp = 0usize;
    for (rank, o) in m.outcomes.iter().enumerate() {
        tp += o.is_tp() as usize;
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    let mut envelope = 0.0f64;
    let mut area = 0.0;
    for (o, p) in m.outcomes.iter().zip(&precision).rev() {
        envelope = envelope.max(*p);
        if o.is_tp() {
            area += envelope;
        }
    }
    Some(area / m.n_gt as f64)
}

/// Unweighted mean of the defined per-class APs.
///
/// Undefined classes are skipped with a warning; if none is defined the
/// metric does not exist.
pub fn mean_ap(per_class: &[(Compartment, Option<f64>)]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (class, ap) in per_class {
        match ap {
            Some(v) => {
                sum += v;
                n += 1;
            }
            None => log::warn!("class {class} has no ground truth; excluded from mAP"),
        }
    }
    if n == 0 {
        return Err(Error::Evaluation("no class has any ground truth".into()));
    }
    Ok(sum / n as f64)
}
