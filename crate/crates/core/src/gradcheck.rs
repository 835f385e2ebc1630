//! Central-difference gradient checking.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates left out because a probe crossed a kink of a piecewise
    /// linear op, where central differences are not a derivative estimate.
    pub kinks_skipped: usize,
}

impl GradCheckReport {
    pub fn merge(self, other: GradCheckReport) -> GradCheckReport {
        let worst = if other.max_rel_error > self.max_rel_error {
            &other
        } else {
            &self
        };
        GradCheckReport {
            max_rel_error: worst.max_rel_error,
            worst_index: worst.worst_index,
            checked: self.checked + other.checked,
            kinks_skipped: self.kinks_skipped + other.kinks_skipped,
        }
    }
}

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `f` at `point`, probing
/// only the listed coordinates. `f` receives the perturbed point.
pub fn check_gradient<T, F, I>(
    point: &[T],
    analytic: &[T],
    coords: I,
    step: f64,
    mut f: F,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
    I: IntoIterator<Item = usize>,
{
    check_gradient_piecewise(point, analytic, coords, step, |p| (f(p), Vec::new()))
}

/// Like [`check_gradient`], for functions that are only piecewise smooth.
/// `f` also returns a pattern identifying the piece it evaluated on (for
/// example the signs of every ReLU input). A coordinate whose `+h` or `-h`
/// probe lands on a different piece than the unperturbed point is counted in
/// `kinks_skipped` instead of being compared.
pub fn check_gradient_piecewise<T, F, I>(
    point: &[T],
    analytic: &[T],
    coords: I,
    step: f64,
    mut f: F,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&[T]) -> (T, Vec<bool>),
    I: IntoIterator<Item = usize>,
{
    if point.len() != analytic.len() {
        return Err(Error::LengthMismatch {
            what: "gradient check",
            expected: point.len(),
            found: analytic.len(),
        });
    }
    let mut x = point.to_vec();
    let h = T::lit(step);
    let (_, base_piece) = f(&x);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        kinks_skipped: 0,
    };
    for i in coords {
        if i >= x.len() {
            return Err(Error::InvalidArgument(format!(
                "probe index {i} out of range {}",
                x.len()
            )));
        }
        let orig = x[i];
        x[i] = orig + h;
        let (plus, plus_piece) = f(&x);
        x[i] = orig - h;
        let (minus, minus_piece) = f(&x);
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() || !analytic[i].is_finite() {
            return Err(Error::NonFinite {
                what: "gradient check probe".into(),
                index: i,
            });
        }
        if plus_piece != base_piece || minus_piece != base_piece {
            report.kinks_skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (h + h);
        let err = relative_error(analytic[i].as_f64(), numeric.as_f64());
        if report.worst_index.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Checks every coordinate.
pub fn check_all<T, F>(point: &[T], analytic: &[T], step: f64, f: F) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    check_gradient(point, analytic, 0..point.len(), step, f)
}

/// [`check_gradient_piecewise`] over every coordinate.
pub fn check_all_piecewise<T, F>(
    point: &[T],
    analytic: &[T],
    step: f64,
    f: F,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&[T]) -> (T, Vec<bool>),
{
    check_gradient_piecewise(point, analytic, 0..point.len(), step, f)
}
