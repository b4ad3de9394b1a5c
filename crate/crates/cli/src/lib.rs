//! Command-line surface of the H-score pipeline.
//!
//! Every command resolves a [`config::PipelineConfig`], runs inside a rayon
//! pool sized by `--threads`, and echoes the resolved configuration and tool
//! version into each artifact it writes. Exit codes: 0 success, 2 input
//! error, 3 constraint violation.

// Negated float comparisons are deliberate: NaN must fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod commands;
pub mod config;
pub mod error;

pub use app::run;
