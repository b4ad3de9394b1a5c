use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{self, calibrate::CalibrateArgs, require_out, synth::SynthArgs, Context};
use crate::config::{parse_ratios, PipelineConfig};
use crate::error::{CliError, CliResult, EXIT_INPUT, EXIT_OK};

#[derive(Debug, Parser)]
#[command(name = "hscore", version, about = "Nucleus keypoint decoding and H-score quantification for IHC tiles")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// key=value configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `seed` from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Config override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cut a raster into fixed field-of-view tiles and filter empty ones.
    Tile {
        raster: PathBuf,
        /// Source resolution in micrometers per pixel.
        #[arg(long)]
        mpp: f64,
        #[arg(long)]
        slide_id: Option<String>,
    },
    /// Seeded train/val/test split of a tile manifest.
    Split {
        manifest: PathBuf,
        /// Overrides `split.ratios`, e.g. 3:1:1.
        #[arg(long)]
        ratios: Option<String>,
    },
    /// Decode heatmap files (`slide__tile.hmf`) into keypoints.
    Extract {
        #[arg(required = true)]
        heatmaps: Vec<PathBuf>,
    },
    /// Fuse keypoint files from several models.
    Fuse {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// One weight per input, comma separated; default all 1.
        #[arg(long, value_delimiter = ',')]
        weights: Vec<f64>,
    },
    /// Render keypoints into per-tile heatmap files.
    Render {
        keypoints: PathBuf,
        /// Heatmap side in pixels; defaults to `tile.output_px`.
        #[arg(long)]
        size: Option<u32>,
    },
    /// Classify nuclei and report H-scores per slide and pooled.
    Score {
        #[arg(long)]
        tiles: PathBuf,
        #[arg(long)]
        keypoints: PathBuf,
        /// Overrides `stain.profile`.
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Fit an annotator's Value thresholds by grid search.
    Calibrate {
        #[arg(long)]
        tiles: PathBuf,
        /// Keypoints with stain labels.
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        annotator: Option<String>,
        /// Also run leave-one-slide-out and write its folds here.
        #[arg(long, value_name = "FILE")]
        loso: Option<PathBuf>,
        /// Profile timestamp; default SOURCE_DATE_EPOCH, else now.
        #[arg(long)]
        created_utc: Option<String>,
    },
    /// AP/mAP of predictions; with a baseline, bootstrap CIs of the difference.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Write a synthetic oracle bundle.
    Synth {
        /// Slide count; default 1, or 4 for a calibration bundle.
        #[arg(long)]
        slides: Option<usize>,
        #[arg(long, default_value_t = 1)]
        rows: u32,
        #[arg(long, default_value_t = 1)]
        cols: u32,
        #[arg(long, default_value_t = 40)]
        nuclei: usize,
        #[arg(long, default_value_t = 512)]
        tile_size: u32,
        /// Stroma and epithelium fractions.
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.5])]
        compartment_mix: Vec<f64>,
        /// none, weak, moderate, strong fractions.
        #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.25, 0.25, 0.25])]
        class_mix: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        radius: u32,
        #[arg(long, default_value_t = 24.0)]
        min_separation: f64,
        /// Write a calibration bundle with these planted thresholds (LEFT,RIGHT).
        #[arg(long, value_delimiter = ',', value_name = "LEFT,RIGHT")]
        calibration: Option<Vec<u8>>,
        /// Tiles per slide in a calibration bundle.
        #[arg(long, default_value_t = 2)]
        tiles_per_slide: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Tile { .. } => "tile",
            Command::Split { .. } => "split",
            Command::Extract { .. } => "extract",
            Command::Fuse { .. } => "fuse",
            Command::Render { .. } => "render",
            Command::Score { .. } => "score",
            Command::Calibrate { .. } => "calibrate",
            Command::Eval { .. } => "eval",
            Command::Synth { .. } => "synth",
        }
    }
}

/// Resolves the configuration in precedence order.
pub fn resolve_config(g: &GlobalArgs) -> CliResult<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &g.config {
        cfg.apply_file(path)?;
    }
    for kv in &g.set {
        cfg.apply_override(kv)?;
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn expect_len(flag: &str, got: usize, want: usize) -> CliResult<()> {
    if got == want {
        Ok(())
    } else {
        Err(CliError::input(format!("{flag} takes {want} comma-separated values, got {got}")))
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let config = resolve_config(&cli.global)?;
    let ctx = Context {
        config,
        command: cli.command.name(),
    };
    let out = &cli.global.out;
    match &cli.command {
        Command::Tile { raster, mpp, slide_id } => {
            let n = commands::tile::run(&ctx, raster, *mpp, slide_id.as_deref(), require_out(out)?)?;
            println!("{n} tiles");
        }
        Command::Split { manifest, ratios } => {
            let ratios = match ratios {
                Some(r) => parse_ratios(r)?,
                None => ctx.config.split_ratios,
            };
            let c = commands::split::run(&ctx, manifest, ratios, require_out(out)?)?;
            println!("train={} val={} test={}", c[0], c[1], c[2]);
        }
        Command::Extract { heatmaps } => {
            let n = commands::heatmaps::extract(&ctx, heatmaps, require_out(out)?)?;
            println!("{n} keypoints");
        }
        Command::Fuse { inputs, weights } => {
            let n = commands::heatmaps::fuse(&ctx, inputs, weights, require_out(out)?)?;
            println!("{n} fused keypoints");
        }
        Command::Render { keypoints, size } => {
            let size = size.unwrap_or(ctx.config.tile_output_px);
            let n = commands::heatmaps::render(&ctx, keypoints, size, require_out(out)?)?;
            println!("{n} heatmaps");
        }
        Command::Score {
            tiles,
            keypoints,
            profile,
        } => {
            let o = commands::score::run(&ctx, tiles, keypoints, profile.as_deref(), require_out(out)?)?;
            print!("{}", o.format_table());
        }
        Command::Calibrate {
            tiles,
            annotations,
            predictions,
            annotator,
            loso,
            created_utc,
        } => {
            let r = commands::calibrate::run(
                &ctx,
                &CalibrateArgs {
                    tiles_dir: tiles,
                    annotations,
                    predictions,
                    annotator: annotator.as_deref(),
                    loso: loso.as_deref(),
                    created_utc: created_utc.as_deref(),
                    out: require_out(out)?,
                },
            )?;
            println!(
                "value_left={} value_right={} objective={}",
                r.profile.value_left, r.profile.value_right, r.objective
            );
        }
        Command::Eval { gt, pred, baseline } => {
            match commands::eval::run(&ctx, gt, pred, baseline.as_deref(), require_out(out)?)? {
                commands::eval::EvalOutput::Single { report } => print!("{}", commands::eval::format_report(&report)),
                commands::eval::EvalOutput::Paired { table, .. } => print!("{table}"),
            }
        }
        Command::Synth {
            slides,
            rows,
            cols,
            nuclei,
            tile_size,
            compartment_mix,
            class_mix,
            radius,
            min_separation,
            calibration,
            tiles_per_slide,
        } => {
            expect_len("--compartment-mix", compartment_mix.len(), 2)?;
            expect_len("--class-mix", class_mix.len(), 4)?;
            if let Some(c) = calibration {
                expect_len("--calibration", c.len(), 2)?;
            }
            let args = SynthArgs {
                slides: *slides,
                rows: *rows,
                cols: *cols,
                nuclei: *nuclei,
                tile_size: *tile_size,
                compartment_mix: [compartment_mix[0], compartment_mix[1]],
                class_mix: [class_mix[0], class_mix[1], class_mix[2], class_mix[3]],
                radius: *radius,
                min_separation: *min_separation,
                calibration: calibration.as_ref().map(|v| (v[0], v[1])),
                tiles_per_slide: *tiles_per_slide,
            };
            commands::synth::run(&ctx, &args, require_out(out)?)?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command inside a pool of
/// `--threads` workers and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.global.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_INPUT;
        }
    };
    match pool.install(|| execute(cli)) {
        Ok(()) => EXIT_OK,
        Err(CliError { code, message }) => {
            eprintln!("error: {message}");
            code
        }
    }
}
