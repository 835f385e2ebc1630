//! Diagnosis manifests, train/validation splits and label encodings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of diagnosis grades (0 = none … 4 = proliferative).
pub const NUM_CLASSES: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub diagnosis: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Val,
}

impl Subset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Val => "val",
        }
    }
}

/// A manifest with every record assigned to a subset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitManifest {
    pub records: Vec<SampleRecord>,
    pub subsets: Vec<Subset>,
    pub seed: u64,
}

impl SplitManifest {
    pub fn subset(&self, which: Subset) -> impl Iterator<Item = &SampleRecord> {
        self.records
            .iter()
            .zip(&self.subsets)
            .filter(move |(_, s)| **s == which)
            .map(|(r, _)| r)
    }

    pub fn train(&self) -> Vec<&SampleRecord> {
        self.subset(Subset::Train).collect()
    }

    pub fn val(&self) -> Vec<&SampleRecord> {
        self.subset(Subset::Val).collect()
    }

    /// Writes `id_code,subset` rows in manifest order.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let csv_err = |e: csv::Error| Error::Invalid(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["id_code", "subset"]).map_err(csv_err)?;
        for (r, s) in self.records.iter().zip(&self.subsets) {
            w.write_record([r.id.as_str(), s.as_str()])
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    id_code: String,
    diagnosis: String,
}

/// Reads an `id_code,diagnosis` CSV; images are expected at
/// `image_dir/<id_code>.png`.
pub fn load_manifest(
    csv_path: impl AsRef<Path>,
    image_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let csv_path = csv_path.as_ref();
    let image_dir = image_dir.as_ref();
    let file = std::fs::File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let bad = |row: usize, message: String| Error::Manifest {
        path: csv_path.to_path_buf(),
        row,
        message,
    };
    let headers = reader.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id_code", "diagnosis"] {
        return Err(bad(
            1,
            format!(
                "expected header `id_code,diagnosis`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut records = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        // row 1 is the header
        let line = i + 2;
        let row = row.map_err(|e| bad(line, format!("malformed row: {e}")))?;
        if row.id_code.is_empty() {
            return Err(bad(line, "empty id_code".into()));
        }
        let diagnosis: usize = row.diagnosis.parse().map_err(|_| {
            bad(
                line,
                format!("diagnosis `{}` is not an integer", row.diagnosis),
            )
        })?;
        if diagnosis >= NUM_CLASSES {
            return Err(bad(
                line,
                format!("diagnosis {diagnosis} outside 0..={}", NUM_CLASSES - 1),
            ));
        }
        let image_path = image_dir.join(format!("{}.png", row.id_code));
        if !image_path.is_file() {
            return Err(bad(
                line,
                format!("image {} not found", image_path.display()),
            ));
        }
        records.push(SampleRecord {
            id: row.id_code,
            image_path,
            diagnosis,
        });
    }
    if records.is_empty() {
        return Err(bad(1, "manifest has no rows".into()));
    }
    Ok(DatasetManifest { records })
}

/// Seeded shuffle, then the first `floor(n * val_fraction)` shuffled records
/// go to validation. With `stratify`, each class is shuffled separately and
/// the validation quota is shared between classes by largest remainder, so
/// the total is still `floor(n * val_fraction)`.
pub fn split(
    manifest: &DatasetManifest,
    val_fraction: f64,
    seed: u64,
    stratify: bool,
) -> Result<SplitManifest> {
    let n = manifest.records.len();
    if n < 2 {
        return Err(Error::Invalid(format!(
            "cannot split {n} record(s); need at least 2"
        )));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Invalid(format!(
            "validation fraction {val_fraction} outside (0, 1)"
        )));
    }
    let n_val = (n as f64 * val_fraction).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subsets = vec![Subset::Train; n];
    if stratify {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, r) in manifest.records.iter().enumerate() {
            by_class.entry(r.diagnosis).or_default().push(i);
        }
        let mut quotas: Vec<(usize, usize, f64)> = by_class
            .iter()
            .map(|(&c, idx)| {
                let exact = idx.len() as f64 * n_val as f64 / n as f64;
                (c, exact.floor() as usize, exact - exact.floor())
            })
            .collect();
        let assigned: usize = quotas.iter().map(|q| q.1).sum();
        let mut order: Vec<usize> = (0..quotas.len()).collect();
        order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
        for &k in order.iter().take(n_val - assigned) {
            quotas[k].1 += 1;
        }
        for (c, quota, _) in quotas {
            let idx = by_class.get_mut(&c).expect("class present");
            idx.shuffle(&mut rng);
            for &i in idx.iter().take(quota) {
                subsets[i] = Subset::Val;
            }
        }
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(n_val) {
            subsets[i] = Subset::Val;
        }
    }
    Ok(SplitManifest {
        records: manifest.records.clone(),
        subsets,
        seed,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelEncoding {
    /// Unit vector at the grade index.
    #[default]
    Onehot,
    /// Cumulative multi-hot: grade g sets components 0..=g.
    Ordinal,
}

impl std::fmt::Display for LabelEncoding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LabelEncoding::Onehot => "onehot",
            LabelEncoding::Ordinal => "ordinal",
        })
    }
}

impl std::str::FromStr for LabelEncoding {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "onehot" => Ok(LabelEncoding::Onehot),
            "ordinal" => Ok(LabelEncoding::Ordinal),
            other => Err(format!(
                "unknown label encoding `{other}` (expected onehot or ordinal)"
            )),
        }
    }
}

impl LabelEncoding {
    pub fn encode(&self, grade: usize) -> Result<Vec<f64>> {
        match self {
            LabelEncoding::Onehot => one_hot(grade),
            LabelEncoding::Ordinal => ordinal(grade),
        }
    }

    /// Predicted grade for one output row. One-hot uses argmax (lowest index
    /// on ties); ordinal counts the leading run of outputs above 0.5.
    pub fn decode(&self, row: &[f64]) -> usize {
        match self {
            LabelEncoding::Onehot => fdl_core::loss::argmax(row),
            LabelEncoding::Ordinal => row
                .iter()
                .take_while(|&&p| p > 0.5)
                .count()
                .saturating_sub(1),
        }
    }
}

fn check_grade(grade: usize) -> Result<()> {
    if grade >= NUM_CLASSES {
        return Err(Error::Invalid(format!(
            "grade {grade} outside 0..={}",
            NUM_CLASSES - 1
        )));
    }
    Ok(())
}

pub fn one_hot(grade: usize) -> Result<Vec<f64>> {
    check_grade(grade)?;
    Ok((0..NUM_CLASSES)
        .map(|i| if i == grade { 1.0 } else { 0.0 })
        .collect())
}

pub fn ordinal(grade: usize) -> Result<Vec<f64>> {
    check_grade(grade)?;
    Ok((0..NUM_CLASSES)
        .map(|i| if i <= grade { 1.0 } else { 0.0 })
        .collect())
}
