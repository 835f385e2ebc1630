//! The architecture × filter experiment matrix.

use std::fmt::Write as _;
use std::path::Path;

use fdl_core::model::Architecture;
use fdl_data::{DatasetManifest, FilterKind, SplitManifest};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{summarize, MetricsLog, Summary};
use crate::run::{load_split, split_for, write_run_dir, METRICS_FILE};
use crate::train::{train_on, LabeledImages};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_HEADER: &str = "architecture,filter,avg_val_acc,avg_val_loss,best_epoch,status";

/// The six cells in fixed order; cell `i` gets seed `base.seed + i`.
pub fn matrix_cells(base: &RunConfig) -> Vec<RunConfig> {
    let mut cells = Vec::new();
    for arch in Architecture::ALL {
        for filter in FilterKind::ALL {
            let i = cells.len() as u64;
            cells.push(RunConfig {
                architecture: arch,
                filter,
                seed: base.seed.wrapping_add(i),
                ..base.clone()
            });
        }
    }
    cells
}

#[derive(Debug)]
pub struct CellResult {
    pub config: RunConfig,
    pub outcome: Result<Summary>,
}

impl CellResult {
    pub fn failed(&self) -> bool {
        self.outcome.is_err()
    }
}

/// Training and validation images per (filter, image size), or why they
/// could not be loaded.
type LoadedData = Vec<(
    (FilterKind, usize),
    std::result::Result<(LabeledImages, LabeledImages), String>,
)>;

fn run_cell(
    config: &RunConfig,
    split: &SplitManifest,
    data: &LoadedData,
    out: &Path,
) -> Result<Summary> {
    config.validate()?;
    let key = (config.filter, config.image_size);
    let (train, val) = match data.iter().find(|(k, _)| *k == key) {
        Some((_, Ok(d))) => d,
        Some((_, Err(e))) => {
            return Err(Error::Config(format!(
                "loading {} images: {e}",
                config.filter
            )))
        }
        None => {
            return Err(Error::Config(format!(
                "no data loaded for filter {} at size {}",
                config.filter, config.image_size
            )))
        }
    };
    let outcome = train_on(config, train, val, |_| {})?;
    let dir = out.join(config.cell_name());
    write_run_dir(&dir, config, split, &outcome)?;
    // summarize what was persisted so summary.csv agrees with metrics.csv
    let log = MetricsLog::read_csv(dir.join(METRICS_FILE))?;
    summarize(&log).ok_or_else(|| Error::Config("empty metrics log".into()))
}

/// Runs `cells` on one shared split, writing each run to
/// `out/<architecture>_<filter>` and the summary table to `out/summary.csv`.
/// A failing cell is recorded and does not stop the others.
pub fn run_cells(
    cells: &[RunConfig],
    split: &SplitManifest,
    out: &Path,
    parallel: bool,
) -> Result<Vec<CellResult>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut filters: Vec<(FilterKind, usize)> = Vec::new();
    for c in cells {
        if !filters
            .iter()
            .any(|(f, s)| *f == c.filter && *s == c.image_size)
        {
            filters.push((c.filter, c.image_size));
        }
    }
    let data: LoadedData = filters
        .iter()
        .map(|&(f, size)| {
            (
                (f, size),
                load_split(split, f, size).map_err(|e| e.to_string()),
            )
        })
        .collect();
    let run = |c: &RunConfig| CellResult {
        config: c.clone(),
        outcome: run_cell(c, split, &data, out),
    };
    let results: Vec<CellResult> = if parallel {
        cells.par_iter().map(run).collect()
    } else {
        cells.iter().map(run).collect()
    };
    let path = out.join(SUMMARY_FILE);
    std::fs::write(&path, summary_csv(&results)).map_err(|e| Error::io(&path, e))?;
    Ok(results)
}

/// Full matrix from a base configuration; the split uses the base seed.
pub fn run_matrix(
    base: &RunConfig,
    manifest: &DatasetManifest,
    out: &Path,
    parallel: bool,
) -> Result<Vec<CellResult>> {
    base.validate()?;
    let split = split_for(base, manifest)?;
    run_cells(&matrix_cells(base), &split, out, parallel)
}

pub fn summary_csv(results: &[CellResult]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in results {
        let (a, f) = (r.config.architecture, r.config.filter);
        match &r.outcome {
            Ok(sum) => writeln!(
                s,
                "{a},{f},{:.6},{:.6},{},ok",
                sum.avg_val_acc, sum.avg_val_loss, sum.best_epoch
            ),
            Err(_) => writeln!(s, "{a},{f},,,,failed"),
        }
        .expect("writing to a String");
    }
    s
}
