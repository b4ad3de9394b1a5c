use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Percentile bootstrap settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Resamples per inner interval.
    pub resamples: usize,
    /// Two-sided coverage, strictly inside (0, 1).
    pub confidence: f64,
    /// Independent inner intervals whose bounds are averaged.
    pub outer_repeats: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 10_000,
            confidence: 0.95,
            outer_repeats: 10_000,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resamples == 0 || self.outer_repeats == 0 {
            return Err(Error::domain("resamples and outer_repeats must be >= 1"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::domain(format!(
                "confidence must lie in (0, 1), got {}",
                self.confidence
            )));
        }
        Ok(())
    }
}

/// One percentile interval and the mean of its resample means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InnerInterval {
    pub lower: f64,
    pub upper: f64,
    pub resample_mean: f64,
}

/// Averaged percentile bounds and the observed mean of the input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapCi {
    pub lower: f64,
    pub upper: f64,
    pub mean: f64,
}

/// Mean anchored on the first element, so constant input returns that
/// constant exactly and a dyadic shift moves the result exactly.
pub(crate) fn anchored_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut it = values.into_iter();
    let anchor = it.next().expect("anchored_mean of empty sequence");
    let mut n = 1usize;
    let mut acc = 0.0;
    for v in it {
        acc += v - anchor;
        n += 1;
    }
    anchor + acc / n as f64
}

/// 0-based order statistics `(floor(a*B), ceil((1-a)*B) - 1)` of `B` sorted
/// values, with products within 1e-9 of an integer snapped to it.
pub fn percentile_ranks(b: usize, confidence: f64) -> (usize, usize) {
    let alpha = (1.0 - confidence) / 2.0;
    let snap = |v: f64| {
        let r = v.round();
        if (v - r).abs() < 1e-9 {
            r
        } else {
            v
        }
    };
    let lo = snap(alpha * b as f64).floor() as usize;
    let hi = (snap((1.0 - alpha) * b as f64).ceil() as usize).saturating_sub(1);
    (lo.min(b - 1), hi.clamp(lo.min(b - 1), b - 1))
}

/// Draws `resamples` same-length resamples with replacement from `data` and
/// returns the percentile interval of their means.
pub fn inner_interval(data: &[f64], resamples: usize, confidence: f64, rng: &mut impl Rng) -> InnerInterval {
    let n = data.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| anchored_mean((0..n).map(|_| data[rng.random_range(0..n)])))
        .collect();
    let resample_mean = anchored_mean(means.iter().copied());
    means.sort_by(f64::total_cmp);
    let (lo, hi) = percentile_ranks(resamples, confidence);
    InnerInterval {
        lower: means[lo],
        upper: means[hi],
        resample_mean,
    }
}

/// Generator for outer repeat `repeat`: the master seed selects the key and
/// the repeat index selects an independent stream.
pub fn repeat_rng(seed: u64, repeat: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repeat);
    rng
}

/// Percentile bootstrap interval for the mean of `data`, with bounds
/// averaged over `outer_repeats` independent inner intervals.
pub fn bootstrap_ci(data: &[f64], cfg: &BootstrapConfig) -> Result<BootstrapCi> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::domain("bootstrap input is empty"));
    }
    if let Some(v) = data.iter().find(|v| !v.is_finite()) {
        return Err(Error::domain(format!("bootstrap input contains {v}")));
    }
    let intervals: Vec<InnerInterval> = (0..cfg.outer_repeats as u64)
        .into_par_iter()
        .map(|r| inner_interval(data, cfg.resamples, cfg.confidence, &mut repeat_rng(cfg.seed, r)))
        .collect();
    Ok(BootstrapCi {
        lower: anchored_mean(intervals.iter().map(|i| i.lower)),
        upper: anchored_mean(intervals.iter().map(|i| i.upper)),
        mean: anchored_mean(data.iter().copied()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(resamples: usize, outer: usize, seed: u64) -> BootstrapConfig {
        BootstrapConfig {
            resamples,
            confidence: 0.95,
            outer_repeats: outer,
            seed,
        }
    }

    #[test]
    fn constant_input_is_degenerate() {
        for c in [0.1, -3.7, 0.0, 1e-7] {
            let ci = bootstrap_ci(&[c; 7], &cfg(200, 5, 3)).unwrap();
            assert_eq!((ci.lower, ci.upper, ci.mean), (c, c, c));
        }
    }

    #[test]
    fn shift_moves_bounds_exactly() {
        let data: Vec<f64> = (0..12).map(|i| (i * 37 % 11) as f64 / 8.0).collect();
        let shifted: Vec<f64> = data.iter().map(|v| v + 2.0).collect();
        let a = bootstrap_ci(&data, &cfg(300, 7, 5)).unwrap();
        let b = bootstrap_ci(&shifted, &cfg(300, 7, 5)).unwrap();
        assert_eq!(b.lower, a.lower + 2.0);
        assert_eq!(b.upper, a.upper + 2.0);
        assert_eq!(b.mean, a.mean + 2.0);
    }

    #[test]
    fn ranks_for_default_sizes() {
        assert_eq!(percentile_ranks(10_000, 0.95), (250, 9749));
        assert_eq!(percentile_ranks(1000, 0.95), (25, 974));
        assert_eq!(percentile_ranks(1, 0.95), (0, 0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(bootstrap_ci(&[], &cfg(10, 1, 0)).is_err());
        assert!(bootstrap_ci(&[1.0], &cfg(0, 1, 0)).is_err());
        assert!(bootstrap_ci(&[f64::NAN], &cfg(10, 1, 0)).is_err());
        let mut bad = cfg(10, 1, 0);
        bad.confidence = 1.0;
        assert!(bootstrap_ci(&[1.0], &bad).is_err());
    }

    #[test]
    fn seed_reproducible_and_thread_independent() {
        let data: Vec<f64> = (0..30).map(|i| ((i * 7919) % 101) as f64 / 101.0).collect();
        let a = bootstrap_ci(&data, &cfg(500, 20, 9)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| bootstrap_ci(&data, &cfg(500, 20, 9)).unwrap());
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn inner_interval_is_ordered(data in proptest::collection::vec(-10.0f64..10.0, 1..20), seed in any::<u64>()) {
            let iv = inner_interval(&data, 200, 0.9, &mut repeat_rng(seed, 0));
            prop_assert!(iv.lower <= iv.resample_mean + 1e-12);
            prop_assert!(iv.resample_mean <= iv.upper + 1e-12);
        }
    }
}
