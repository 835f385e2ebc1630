//! Training runs for the fundus classifiers: the mini-batch loop, per-epoch
//! metrics with best-epoch summaries, SVG plots, the run-directory layout and
//! the architecture × filter experiment matrix.

pub mod config;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod plot;
pub mod run;
pub mod train;

pub use config::{FixedConstants, RunConfig, RunRecord, Seeds};
pub use error::{Error, Result};
pub use matrix::{matrix_cells, run_cells, run_matrix, CellResult};
pub use metrics::{summarize, EpochMetrics, MetricsLog, Summary};
pub use run::{load_split, train_run, write_run_dir};
pub use train::{evaluate, steps_per_epoch, train_on, LabeledImages, Model, TrainOutcome};
