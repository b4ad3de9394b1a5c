//! Nucleus keypoint post-processing and H-score quantification for
//! immunohistochemistry tiles.
//!
//! The pipeline runs: micron-calibrated tiling ([`tiling`]), heatmap decoding
//! into per-compartment nucleus keypoints ([`keypoints`], [`fusion`]),
//! colour-threshold stain grading ([`stain`]) and H-score aggregation
//! ([`hscore`]). [`calibration`] fits per-annotator Value thresholds,
//! [`evaluation`] scores detectors, and [`synth`] plants tiles with known
//! answers for every stage.
//!
//! All parallel work collects in input order and merges integer counts, so
//! results do not depend on the rayon thread count.

// Negated float comparisons are deliberate: NaN must fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod color;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod heatmap;
pub mod hscore;
pub mod keypoints;
pub mod raster;
pub mod stain;
pub mod synth;
pub mod tiling;
pub mod tsv;

pub use calibration::{
    calibrate, leave_one_slide_out, load_profile, parse_profile, save_profile, CalibrationItem, CalibrationParams,
    CalibrationResult, CalibrationSet, GridSpec, LabeledKeypoint, LosoFold,
};
pub use color::{hsv_to_rgb, rgb8_to_hsv, rgb_to_hsv, HsvPixel};
pub use error::{Error, Result};
pub use evaluation::{
    average_precision, bootstrap_ci, compare, evaluate, match_keypoints, mean_ap, BootstrapCi, BootstrapConfig,
    Comparison, EvalConfig, EvalReport, MatchResult,
};
pub use fusion::fuse_keypoints;
pub use heatmap::{huber, huber_loss, mean_huber, Heatmap};
pub use hscore::{compute_hscore, count_tile, score_tiles, ClassCounts, HScoreReport, StainCounts};
pub use keypoints::{extract_keypoints, render_heatmap, Compartment, ExtractorParams, Keypoint};
pub use raster::RgbImage;
pub use stain::{classify_nucleus, estimate_hue_split, StainClass, StainProfile};
pub use synth::{generate_slide, generate_tile, SynthSpec, SynthTile};
pub use tiling::{cut_tiles, is_empty_tile, EmptyTileFilter, Tile};
pub use tsv::KeypointRecord;
