//! Per-epoch metrics, their CSV form, and best-epoch summaries.

use std::fmt::Write as _;
use std::path::Path;

use num_rational::BigRational;
use num_traits::{FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

/// How summaries are formed; echoed in `config.json`.
pub const SUMMARY_RULE: &str =
    "mean of validation metrics from the best epoch (highest val_acc, earliest on ties) to the last epoch, inclusive";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<EpochMetrics>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub avg_val_acc: f64,
    pub avg_val_loss: f64,
    /// 1-based epoch number.
    pub best_epoch: usize,
}

impl MetricsLog {
    pub fn push(&mut self, row: EpochMetrics) {
        self.rows.push(row);
    }

    /// 1-based epoch with the highest validation accuracy; earliest on ties.
    pub fn best_epoch(&self) -> Option<usize> {
        let mut best: Option<&EpochMetrics> = None;
        for r in &self.rows {
            if best.is_none_or(|b| r.val_acc > b.val_acc) {
                best = Some(r);
            }
        }
        best.map(|r| r.epoch)
    }

    /// Fixed six-decimal CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6}",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn parse_csv(text: &str, path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            message,
        };
        let mut lines = text.lines();
        if lines.next() != Some(METRICS_HEADER) {
            return Err(bad(format!("expected header `{METRICS_HEADER}`")));
        }
        let mut log = MetricsLog::default();
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(bad(format!("line {}: expected 5 fields", i + 2)));
            }
            let num = |k: usize| {
                fields[k]
                    .parse::<f64>()
                    .map_err(|_| bad(format!("line {}: bad number `{}`", i + 2, fields[k])))
            };
            let epoch = fields[0]
                .parse()
                .map_err(|_| bad(format!("line {}: bad epoch `{}`", i + 2, fields[0])))?;
            log.push(EpochMetrics {
                epoch,
                train_loss: num(1)?,
                train_acc: num(2)?,
                val_loss: num(3)?,
                val_acc: num(4)?,
            });
        }
        Ok(log)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }

    /// The log as persisted: every value rounded to six decimals.
    pub fn rounded(&self) -> Self {
        Self::parse_csv(&self.to_csv(), Path::new("<memory>")).expect("own output parses")
    }
}

/// Means of the validation metrics over epochs `best..=last`. `None` for an
/// empty log.
pub fn summarize(log: &MetricsLog) -> Option<Summary> {
    let best = log.best_epoch()?;
    let start = log
        .rows
        .iter()
        .position(|r| r.epoch == best)
        .expect("best epoch is in the log");
    let tail = &log.rows[start..];
    Some(Summary {
        avg_val_acc: exact_mean(tail.iter().map(|r| r.val_acc)),
        avg_val_loss: exact_mean(tail.iter().map(|r| r.val_loss)),
        best_epoch: best,
    })
}

/// Mean computed in exact rational arithmetic and rounded once, so it does
/// not depend on summation order. Non-finite inputs fall back to plain
/// floating point.
pub fn exact_mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    let exact: Option<BigRational> = values.clone().map(BigRational::from_f64).sum();
    match exact {
        Some(sum) if n > 0 => (sum / BigRational::from_usize(n).expect("usize fits"))
            .to_f64()
            .expect("mean of finite values is finite"),
        _ => values.sum::<f64>() / n as f64,
    }
}
