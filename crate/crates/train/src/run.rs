//! Single runs on disk: data preparation and the run-directory layout.

use std::path::{Path, PathBuf};

use fdl_data::batch::load_tensors;
use fdl_data::{split, DatasetManifest, FilterKind, SplitManifest};

use crate::config::{RunConfig, RunRecord, Seeds};
use crate::error::{Error, Result};
use crate::metrics::{EpochMetrics, MetricsLog};
use crate::plot::{accuracy_svg, loss_svg};
use crate::train::{train_on, LabeledImages, TrainOutcome};

pub const CONFIG_FILE: &str = "config.json";
pub const SPLIT_FILE: &str = "split.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MODEL_FILE: &str = "model.fdl";
pub const BEST_MODEL_FILE: &str = "model_best.fdl";
pub const ACCURACY_PLOT: &str = "accuracy.svg";
pub const LOSS_PLOT: &str = "loss.svg";

/// Filtered, resized training and validation images for one filter.
pub fn load_split(
    split: &SplitManifest,
    filter: FilterKind,
    size: usize,
) -> Result<(LabeledImages, LabeledImages)> {
    let load = |records: Vec<&fdl_data::SampleRecord>| -> Result<LabeledImages> {
        Ok(LabeledImages {
            labels: records.iter().map(|r| r.diagnosis).collect(),
            images: load_tensors(&records, filter, size)?,
        })
    };
    Ok((load(split.train())?, load(split.val())?))
}

/// The run's data split, seeded from the run seed.
pub fn split_for(config: &RunConfig, manifest: &DatasetManifest) -> Result<SplitManifest> {
    Ok(split(
        manifest,
        config.val_fraction,
        Seeds::from_run_seed(config.seed).split,
        config.stratify,
    )?)
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the full run-directory contract into `dir`.
pub fn write_run_dir(
    dir: &Path,
    config: &RunConfig,
    split: &SplitManifest,
    outcome: &TrainOutcome,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let record =
        serde_json::to_string_pretty(&RunRecord::new(config.clone())).expect("config serializes");
    write(dir.join(CONFIG_FILE), record + "\n")?;
    split.write_csv(dir.join(SPLIT_FILE))?;
    write(dir.join(METRICS_FILE), outcome.log.to_csv())?;
    write(dir.join(MODEL_FILE), outcome.model.to_bytes()?)?;
    if let Some(best) = &outcome.best_model {
        write(dir.join(BEST_MODEL_FILE), best.to_bytes()?)?;
    }
    write(dir.join(ACCURACY_PLOT), accuracy_svg(&outcome.log))?;
    write(dir.join(LOSS_PLOT), loss_svg(&outcome.log))?;
    Ok(())
}

/// Reads `config.json` from a run directory.
pub fn read_run_config(dir: &Path) -> Result<RunRecord> {
    let path = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path,
        message: e.to_string(),
    })
}

/// Splits, loads, trains and writes one run into `out`.
pub fn train_run(
    config: &RunConfig,
    manifest: &DatasetManifest,
    out: &Path,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<MetricsLog> {
    config.validate()?;
    let split = split_for(config, manifest)?;
    let (train, val) = load_split(&split, config.filter, config.image_size)?;
    let outcome = train_on(config, &train, &val, on_epoch)?;
    write_run_dir(out, config, &split, &outcome)?;
    Ok(outcome.log)
}
