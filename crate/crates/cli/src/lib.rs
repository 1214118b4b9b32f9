//! Orchestration layer of the `histoforest` command-line tool: run
//! configuration, stage commands, report and figure writers.
//!
//! Output layout under `[run] output_dir`:
//!
//! ```text
//! features/  matrix.csv qc.csv screen.csv
//! model/     forest.json split.csv oob_scores.csv
//! eval/      tile_scores.csv patient_scores.csv roc.csv summary.csv *.svg
//! explain/   importance.csv interactions.csv grid_*.csv summary.csv *.svg
//! report.json
//! ```

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod report;
pub mod svg;

pub use commands::{Command, Options, Runner};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
