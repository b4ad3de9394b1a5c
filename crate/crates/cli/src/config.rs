//! Pipeline configuration: `key=value` lines with dotted section prefixes.
//!
//! Precedence, lowest first: built-in defaults, `--config` file, `--set`
//! overrides, dedicated flags such as `--seed`. Keys whose default follows
//! `nucleus_radius_px` stay unset until resolution.

use std::path::{Path, PathBuf};

use hscore_core::calibration::GridSpec;
use hscore_core::evaluation::{BootstrapConfig, EvalConfig};
use hscore_core::keypoints::ExtractorParams;
use hscore_core::tiling::{default_half_side, EmptyTileFilter};

use crate::error::{io_err, CliError, CliResult};

/// Every tunable of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub nucleus_radius_px: f64,
    pub seed: u64,
    pub tile_fov_um: f64,
    pub tile_output_px: u32,
    pub filter: EmptyTileFilter,
    pub extractor_threshold: f64,
    pub extractor_min_distance: Option<f64>,
    pub extractor_pool_size: u32,
    pub render_sigma: f64,
    pub fuse_radius: Option<f64>,
    pub stain_profile: Option<PathBuf>,
    pub stain_half_side_factor: f64,
    pub stain_half_side_px: Option<u32>,
    pub eval_match_radius: Option<f64>,
    pub eval_batch_size: usize,
    pub bootstrap_resamples: usize,
    pub bootstrap_confidence: f64,
    pub bootstrap_outer_repeats: usize,
    pub calibration_grid: GridSpec,
    pub calibration_hue_split_deg: Option<f64>,
    pub calibration_brown_hue_deg: Option<f64>,
    pub split_ratios: [u32; 3],
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            // declared average nucleus radius at 512 px per 100 um
            nucleus_radius_px: 15.0,
            seed: 0,
            tile_fov_um: 100.0,
            tile_output_px: 512,
            filter: EmptyTileFilter::default(),
            extractor_threshold: 0.5,
            extractor_min_distance: None,
            extractor_pool_size: 3,
            render_sigma: 2.0,
            fuse_radius: None,
            stain_profile: None,
            stain_half_side_factor: 0.8,
            stain_half_side_px: None,
            eval_match_radius: None,
            eval_batch_size: 8,
            bootstrap_resamples: 10_000,
            bootstrap_confidence: 0.95,
            bootstrap_outer_repeats: 10_000,
            calibration_grid: GridSpec::default(),
            calibration_hue_split_deg: None,
            calibration_brown_hue_deg: None,
            split_ratios: [3, 1, 1],
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| CliError::input(format!("config key `{key}`: cannot parse {value:?}")))
}

fn opt_to_string<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

impl PipelineConfig {
    /// Sets one key. An empty value resets an optional key to its default.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let v = value.trim();
        let opt_f64 = |v: &str| -> CliResult<Option<f64>> {
            if v.is_empty() {
                Ok(None)
            } else {
                num(key, v).map(Some)
            }
        };
        match key {
            "nucleus_radius_px" => self.nucleus_radius_px = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "tile.fov_um" => self.tile_fov_um = num(key, v)?,
            "tile.output_px" => self.tile_output_px = num(key, v)?,
            "filter.mean_low" => self.filter.mean_low = num(key, v)?,
            "filter.mean_high" => self.filter.mean_high = num(key, v)?,
            "filter.std_min" => self.filter.std_min = num(key, v)?,
            "extractor.threshold" => self.extractor_threshold = num(key, v)?,
            "extractor.min_distance" => self.extractor_min_distance = opt_f64(v)?,
            "extractor.pool_size" => self.extractor_pool_size = num(key, v)?,
            "render.sigma" => self.render_sigma = num(key, v)?,
            "fuse.radius" => self.fuse_radius = opt_f64(v)?,
            "stain.profile" => self.stain_profile = (!v.is_empty()).then(|| PathBuf::from(v)),
            "stain.half_side_factor" => self.stain_half_side_factor = num(key, v)?,
            "stain.half_side_px" => {
                self.stain_half_side_px = if v.is_empty() { None } else { Some(num(key, v)?) }
            }
            "eval.match_radius" => self.eval_match_radius = opt_f64(v)?,
            "eval.batch_size" => self.eval_batch_size = num(key, v)?,
            "bootstrap.resamples" => self.bootstrap_resamples = num(key, v)?,
            "bootstrap.confidence" => self.bootstrap_confidence = num(key, v)?,
            "bootstrap.outer_repeats" => self.bootstrap_outer_repeats = num(key, v)?,
            "calibration.grid_lo" => self.calibration_grid.lo = num(key, v)?,
            "calibration.grid_hi" => self.calibration_grid.hi = num(key, v)?,
            "calibration.grid_step" => self.calibration_grid.step = num(key, v)?,
            "calibration.hue_split_deg" => self.calibration_hue_split_deg = opt_f64(v)?,
            "calibration.brown_hue_deg" => self.calibration_brown_hue_deg = opt_f64(v)?,
            "split.ratios" => self.split_ratios = parse_ratios(v)?,
            _ => return Err(CliError::input(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> CliResult<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::input(format!("{origin}:{}: expected key=value", i + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| CliError::input(format!("{origin}:{}: {}", i + 1, e.message)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies a `--set key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> CliResult<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::input(format!("--set expects key=value, got {kv:?}")))?;
        self.set(k.trim(), v)
    }

    pub fn extractor_params(&self) -> ExtractorParams {
        ExtractorParams {
            confidence_threshold: self.extractor_threshold,
            min_distance: self.extractor_min_distance.unwrap_or(self.nucleus_radius_px),
            pool_size: self.extractor_pool_size,
        }
    }

    pub fn fuse_radius(&self) -> f64 {
        self.fuse_radius.unwrap_or(self.nucleus_radius_px)
    }

    pub fn half_side_px(&self) -> u32 {
        self.stain_half_side_px
            .unwrap_or_else(|| default_half_side(self.nucleus_radius_px, self.stain_half_side_factor))
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            match_radius: self.eval_match_radius.unwrap_or(self.nucleus_radius_px),
            batch_size: self.eval_batch_size,
        }
    }

    pub fn bootstrap_config(&self) -> BootstrapConfig {
        BootstrapConfig {
            resamples: self.bootstrap_resamples,
            confidence: self.bootstrap_confidence,
            outer_repeats: self.bootstrap_outer_repeats,
            seed: self.seed,
        }
    }

    /// Range checks; violations are constraint errors.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::constraint(format!("config: {m}")));
        let positive = [
            ("nucleus_radius_px", self.nucleus_radius_px),
            ("tile.fov_um", self.tile_fov_um),
            ("render.sigma", self.render_sigma),
            ("stain.half_side_factor", self.stain_half_side_factor),
        ];
        for (k, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{k}={v} must be positive"));
            }
        }
        if self.tile_output_px == 0 {
            return bad("tile.output_px must be positive".into());
        }
        if self.split_ratios.contains(&0) {
            return bad("split.ratios must all be positive".into());
        }
        self.filter.validate()?;
        self.extractor_params().validate()?;
        if !(0.0..=1.0).contains(&self.extractor_threshold) {
            return bad(format!("extractor.threshold={} outside [0, 1]", self.extractor_threshold));
        }
        if !(self.fuse_radius() >= 0.0) {
            return bad("fuse.radius must be >= 0".into());
        }
        self.eval_config().validate()?;
        self.bootstrap_config().validate()?;
        self.calibration_grid.validate()?;
        for (k, v) in [
            ("calibration.hue_split_deg", self.calibration_hue_split_deg),
            ("calibration.brown_hue_deg", self.calibration_brown_hue_deg),
        ] {
            if let Some(v) = v {
                if !(0.0..360.0).contains(&v) {
                    return bad(format!("{k}={v} outside [0, 360)"));
                }
            }
        }
        Ok(())
    }

    /// Fully resolved `key=value` lines in a fixed order.
    pub fn echo(&self) -> Vec<String> {
        let p = self.extractor_params();
        let e = self.eval_config();
        let g = &self.calibration_grid;
        let r = self.split_ratios;
        vec![
            format!("nucleus_radius_px={}", self.nucleus_radius_px),
            format!("seed={}", self.seed),
            format!("tile.fov_um={}", self.tile_fov_um),
            format!("tile.output_px={}", self.tile_output_px),
            "tile.resample=bilinear".to_string(),
            format!("filter.mean_low={}", self.filter.mean_low),
            format!("filter.mean_high={}", self.filter.mean_high),
            format!("filter.std_min={}", self.filter.std_min),
            "filter.gray=(R+G+B)/3".to_string(),
            format!("extractor.threshold={}", p.confidence_threshold),
            format!("extractor.min_distance={}", p.min_distance),
            format!("extractor.pool_size={}", p.pool_size),
            format!("render.sigma={}", self.render_sigma),
            format!("fuse.radius={}", self.fuse_radius()),
            format!(
                "stain.profile={}",
                self.stain_profile.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
            ),
            format!("stain.half_side_factor={}", self.stain_half_side_factor),
            format!("stain.half_side_px={}", self.half_side_px()),
            format!("eval.match_radius={}", e.match_radius),
            format!("eval.batch_size={}", e.batch_size),
            "eval.interpolation=all-point".to_string(),
            format!("bootstrap.resamples={}", self.bootstrap_resamples),
            format!("bootstrap.confidence={}", self.bootstrap_confidence),
            format!("bootstrap.outer_repeats={}", self.bootstrap_outer_repeats),
            format!("calibration.grid_lo={}", g.lo),
            format!("calibration.grid_hi={}", g.hi),
            format!("calibration.grid_step={}", g.step),
            format!("calibration.hue_split_deg={}", opt_to_string(&self.calibration_hue_split_deg)),
            format!("calibration.brown_hue_deg={}", opt_to_string(&self.calibration_brown_hue_deg)),
            format!("split.ratios={}:{}:{}", r[0], r[1], r[2]),
        ]
    }
}

/// Parses `a:b:c`.
pub fn parse_ratios(v: &str) -> CliResult<[u32; 3]> {
    let parts: Vec<&str> = v.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::input(format!("ratios must look like 3:1:1, got {v:?}")));
    }
    let mut out = [0u32; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = num("split.ratios", p)?;
    }
    Ok(out)
}
