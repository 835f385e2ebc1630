//! Subcommand implementations.

use std::path::{Path, PathBuf};

use fdl_core::model::Architecture;
use fdl_core::verify::{self, ComponentReport, FaultInjection};
use fdl_data::batch::{find_pngs, load_tensors, prep_dir};
use fdl_data::{load_manifest, DatasetManifest, FilterKind};
use fdl_train::matrix::SUMMARY_FILE;
use fdl_train::run::{read_run_config, split_for, METRICS_FILE, MODEL_FILE};
use fdl_train::{
    evaluate, matrix_cells, run_matrix, summarize, train_run, FixedConstants, LabeledImages,
    MetricsLog, Model, RunConfig,
};
use serde_json::json;

use crate::args::{
    CheckPreset, EvalArgs, GradcheckArgs, MatrixArgs, PrepArgs, SummaryArgs, TrainArgs,
};
use crate::Failure;

/// Gradient checks pass below this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes") + "\n";
    std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

pub fn prep(a: PrepArgs) -> Result<(), Failure> {
    let filter = FilterKind::from(a.filter);
    if a.size == 0 {
        return Err(usage("--size must be at least 1"));
    }
    if !a.input.is_dir() {
        return Err(usage(format!("{} is not a directory", a.input.display())));
    }
    let inputs = find_pngs(&a.input).map_err(usage)?;
    if inputs.is_empty() {
        return Err(usage(format!("no PNG files under {}", a.input.display())));
    }
    let report = prep_dir(&a.input, &a.output, filter, Some(a.size)).map_err(runtime)?;
    for dst in &report.written {
        println!("wrote {}", dst.display());
    }
    for (src, e) in &report.failed {
        eprintln!("warning: skipped {}: {e}", src.display());
    }
    write_json(
        &a.output.join("prep.json"),
        &json!({
            "input": a.input,
            "filter": filter,
            "size": a.size,
            "written": report.written.len(),
            "skipped": report.failed.len(),
        }),
    )?;
    println!(
        "{} written, {} skipped",
        report.written.len(),
        report.failed.len()
    );
    if report.failed.is_empty() {
        Ok(())
    } else {
        Err(runtime(format!(
            "{} file(s) could not be processed",
            report.failed.len()
        )))
    }
}

fn seed_or_draw(seed: Option<u64>) -> u64 {
    let seed = seed.unwrap_or_else(|| u64::from(rand::random::<u32>()));
    println!("seed: {seed}");
    seed
}

/// Loads the manifest and checks that the configuration can be split, so
/// that bad input is reported before anything is written.
fn load_checked(
    data: &crate::args::DataArgs,
    config: &RunConfig,
) -> Result<DatasetManifest, Failure> {
    config.validate().map_err(usage)?;
    let manifest = load_manifest(&data.csv, &data.images).map_err(usage)?;
    split_for(config, &manifest).map_err(usage)?;
    Ok(manifest)
}

fn print_epoch(prefix: &str, m: &fdl_train::EpochMetrics, epochs: usize) {
    println!(
        "{prefix}epoch {}/{epochs}  train_loss {:.6}  train_acc {:.6}  val_loss {:.6}  val_acc {:.6}",
        m.epoch, m.train_loss, m.train_acc, m.val_loss, m.val_acc
    );
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let seed = seed_or_draw(a.hyper.seed);
    let config = a.hyper.config(a.arch.into(), a.filter.into(), seed);
    let manifest = load_checked(&a.data, &config)?;
    println!(
        "{}",
        serde_json::to_string(&config).expect("config serializes")
    );
    let log = train_run(&config, &manifest, &a.out, |m| {
        print_epoch("", m, config.epochs)
    })
    .map_err(runtime)?;
    if let Some(s) = summarize(&log) {
        println!(
            "best epoch {}  avg_val_acc {:.6}  avg_val_loss {:.6}",
            s.best_epoch, s.avg_val_acc, s.avg_val_loss
        );
    }
    println!("run written to {}", a.out.display());
    Ok(())
}

pub fn matrix(a: MatrixArgs) -> Result<(), Failure> {
    let seed = seed_or_draw(a.hyper.seed);
    let base = a
        .hyper
        .config(Architecture::DensenetMini, FilterKind::Rgb, seed);
    let manifest = load_checked(&a.data, &base)?;
    std::fs::create_dir_all(&a.out).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    let cells = matrix_cells(&base);
    write_json(
        &a.out.join("matrix.json"),
        &json!({
            "split_seed": base.seed,
            "cells": cells,
            "constants": FixedConstants::default(),
        }),
    )?;
    let results = run_matrix(&base, &manifest, &a.out, a.parallel).map_err(runtime)?;
    let summary = std::fs::read_to_string(a.out.join(SUMMARY_FILE)).map_err(runtime)?;
    print!("{summary}");
    let failed: Vec<String> = results
        .iter()
        .filter_map(|r| {
            r.outcome
                .as_ref()
                .err()
                .map(|e| format!("{}: {e}", r.config.cell_name()))
        })
        .collect();
    for f in &failed {
        eprintln!("cell failed: {f}");
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(runtime(format!(
            "{} of {} cells failed",
            failed.len(),
            results.len()
        )))
    }
}

pub fn eval(a: EvalArgs) -> Result<(), Failure> {
    let record = read_run_config(&a.run).map_err(usage)?;
    let config = record.config;
    let model_path = a.model.clone().unwrap_or_else(|| a.run.join(MODEL_FILE));
    let bytes =
        std::fs::read(&model_path).map_err(|e| usage(format!("{}: {e}", model_path.display())))?;
    let model =
        Model::from_bytes(&bytes).map_err(|e| usage(format!("{}: {e}", model_path.display())))?;
    let manifest = load_manifest(&a.data.csv, &a.data.images).map_err(usage)?;
    if manifest.records.is_empty() {
        return Err(usage("manifest has no records"));
    }
    let records: Vec<_> = manifest.records.iter().collect();
    let data = LabeledImages {
        labels: records.iter().map(|r| r.diagnosis).collect(),
        images: load_tensors(&records, config.filter, config.image_size).map_err(runtime)?,
    };
    let (loss, accuracy) = evaluate(&model, &data, &config).map_err(runtime)?;
    let result = json!({
        "model": model_path,
        "csv": a.data.csv,
        "records": data.len(),
        "loss": loss,
        "accuracy": accuracy,
        "config": config,
    });
    println!(
        "records {}  loss {loss:.6}  accuracy {accuracy:.6}",
        data.len()
    );
    if let Some(out) = &a.out {
        write_json(out, &result)?;
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    let fault = FaultInjection(a.inject_fault);
    let reports: Vec<ComponentReport> = match a.preset {
        CheckPreset::Ops => verify::ops_suite(a.seed, fault),
        CheckPreset::TinyDensenet => verify::model_suite(Architecture::DensenetMini, a.seed, fault),
        CheckPreset::TinyResnet => verify::model_suite(Architecture::ResnetMini, a.seed, fault),
    }
    .map_err(runtime)?;
    println!(
        "{:<24} {:>14} {:>8} {:>6}",
        "component", "max_rel_error", "checked", "kinks"
    );
    for r in &reports {
        let flag = if r.passes(GRADCHECK_TOLERANCE) {
            ""
        } else {
            "  BREACH"
        };
        println!(
            "{:<24} {:>14.3e} {:>8} {:>6}{flag}",
            r.component, r.report.max_rel_error, r.report.checked, r.report.kinks_skipped
        );
    }
    let breaches: Vec<&ComponentReport> = reports
        .iter()
        .filter(|r| !r.passes(GRADCHECK_TOLERANCE))
        .collect();
    if breaches.is_empty() {
        println!(
            "all {} components below {GRADCHECK_TOLERANCE:e}",
            reports.len()
        );
        return Ok(());
    }
    let names: Vec<String> = breaches
        .iter()
        .map(|r| {
            format!(
                "{} ({:.3e}, {} of {} probes skipped at kinks)",
                r.component,
                r.report.max_rel_error,
                r.report.kinks_skipped,
                r.report.checked + r.report.kinks_skipped
            )
        })
        .collect();
    Err(runtime(format!(
        "gradient check failed (relative error must stay below {GRADCHECK_TOLERANCE:e}, at most {:.0}% of probes may straddle a kink): {}",
        verify::MAX_KINK_FRACTION * 100.0,
        names.join(", ")
    )))
}

fn run_dirs(path: &Path) -> Result<Vec<PathBuf>, Failure> {
    if path.join(METRICS_FILE).is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(usage(format!("{} is not a directory", path.display())));
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(METRICS_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(usage(format!(
            "no {METRICS_FILE} in or under {}",
            path.display()
        )));
    }
    Ok(dirs)
}

pub fn summary(a: SummaryArgs) -> Result<(), Failure> {
    let mut dirs = Vec::new();
    for p in &a.paths {
        dirs.extend(run_dirs(p)?);
    }
    println!("run,avg_val_acc,avg_val_loss,best_epoch");
    for dir in dirs {
        let log = MetricsLog::read_csv(dir.join(METRICS_FILE)).map_err(runtime)?;
        let s = summarize(&log)
            .ok_or_else(|| runtime(format!("{}: empty metrics log", dir.display())))?;
        println!(
            "{},{:.6},{:.6},{}",
            dir.display(),
            s.avg_val_acc,
            s.avg_val_loss,
            s.best_epoch
        );
    }
    Ok(())
}
