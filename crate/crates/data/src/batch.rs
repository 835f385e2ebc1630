//! Whole-directory preprocessing and bulk image loading.

use std::path::{Path, PathBuf};

use fdl_core::Tensor4;
use rayon::prelude::*;

use crate::dataset::SampleRecord;
use crate::error::{Error, Result};
use crate::filter::FilterKind;
use crate::image::ImageRGB8;
use crate::resize::resize_square;

/// Loads, filters and (optionally) resizes one image.
pub fn prepare(path: &Path, filter: FilterKind, size: Option<usize>) -> Result<ImageRGB8> {
    let img = filter.apply(&ImageRGB8::load_png(path)?);
    Ok(match size {
        Some(s) => resize_square(&img, s),
        None => img,
    })
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// All PNG files under `dir`, sorted.
pub fn find_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(dir) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            Error::io(path, e.into())
        })?;
        if entry.file_type().is_file() && is_png(entry.path()) {
            out.push(entry.into_path());
        }
    }
    out.sort();
    Ok(out)
}

/// Outcome of [`prep_dir`]: written outputs and skipped inputs, both in
/// path order.
#[derive(Debug, Default)]
pub struct PrepReport {
    pub written: Vec<PathBuf>,
    pub failed: Vec<(PathBuf, Error)>,
}

/// Filters every PNG under `input` and writes it to the same relative path
/// under `output`. Files that cannot be read or written are skipped and
/// listed in the report.
pub fn prep_dir(
    input: &Path,
    output: &Path,
    filter: FilterKind,
    size: Option<usize>,
) -> Result<PrepReport> {
    if !input.is_dir() {
        return Err(Error::Invalid(format!(
            "{} is not a directory",
            input.display()
        )));
    }
    let files = find_pngs(input)?;
    let results: Vec<Result<PathBuf>> = files
        .par_iter()
        .map(|src| {
            let rel = src.strip_prefix(input).expect("walked under input");
            let dst = output.join(rel);
            if let Some(parent) = dst.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            prepare(src, filter, size)?.save_png(&dst)?;
            Ok(dst)
        })
        .collect();
    let mut report = PrepReport::default();
    for (src, r) in files.into_iter().zip(results) {
        match r {
            Ok(dst) => report.written.push(dst),
            Err(e) => report.failed.push((src, e)),
        }
    }
    Ok(report)
}

/// Loads the images behind `records` as (1, 3, size, size) tensors.
pub fn load_tensors(
    records: &[&SampleRecord],
    filter: FilterKind,
    size: usize,
) -> Result<Vec<Tensor4<f64>>> {
    records
        .par_iter()
        .map(|r| Ok(prepare(&r.image_path, filter, Some(size))?.to_tensor()))
        .collect()
}
