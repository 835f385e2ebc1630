//! Classification losses and the accuracy metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Predictions are clipped to `[CLIP, 1 - CLIP]` before taking logs.
pub const CLIP: f64 = 1e-7;

/// Loss value together with its gradient with respect to the predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue<T> {
    pub value: T,
    pub gradient: Vec<T>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Per-class binary cross-entropy averaged over the outputs.
    #[default]
    Bce,
    /// Categorical cross-entropy.
    Cce,
}

impl std::str::FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bce" => Ok(LossKind::Bce),
            "cce" => Ok(LossKind::Cce),
            other => Err(format!("unknown loss `{other}` (expected bce or cce)")),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Bce => "bce",
            LossKind::Cce => "cce",
        })
    }
}

fn check_len<T>(y: &[T], yhat: &[T]) -> Result<()> {
    if y.len() != yhat.len() || y.is_empty() {
        return Err(Error::LengthMismatch {
            what: "loss target/prediction",
            expected: y.len(),
            found: yhat.len(),
        });
    }
    Ok(())
}

/// `-(1/k) Σ [y log ŷ + (1-y) log(1-ŷ)]` over the `k` outputs. The gradient is
/// that of the clipped function, so it is zero where clipping is active.
pub fn bce<T: Scalar>(y: &[T], yhat: &[T]) -> Result<LossValue<T>> {
    check_len(y, yhat)?;
    let (lo, hi) = (T::lit(CLIP), T::one() - T::lit(CLIP));
    let k = T::from_usize_lossy(y.len());
    let mut value = T::zero();
    let mut gradient = Vec::with_capacity(y.len());
    for (&t, &p) in y.iter().zip(yhat) {
        let q = p.max(lo).min(hi);
        value -= t * q.ln() + (T::one() - t) * (T::one() - q).ln();
        let g = if p < lo || p > hi {
            T::zero()
        } else {
            -(t / q - (T::one() - t) / (T::one() - q)) / k
        };
        gradient.push(g);
    }
    Ok(LossValue {
        value: value / k,
        gradient,
    })
}

/// `-Σ y log ŷ` with the same clipping as [`bce`].
pub fn cce<T: Scalar>(y: &[T], yhat: &[T]) -> Result<LossValue<T>> {
    check_len(y, yhat)?;
    let (lo, hi) = (T::lit(CLIP), T::one() - T::lit(CLIP));
    let mut value = T::zero();
    let mut gradient = Vec::with_capacity(y.len());
    for (&t, &p) in y.iter().zip(yhat) {
        let q = p.max(lo).min(hi);
        value -= t * q.ln();
        gradient.push(if p < lo || p > hi { T::zero() } else { -t / q });
    }
    Ok(LossValue { value, gradient })
}

/// Mean per-sample loss over a batch of prediction rows. `targets` holds one
/// encoded row per sample; the gradient is already divided by the batch size.
pub fn batch_loss<T: Scalar>(
    kind: LossKind,
    targets: &[Vec<T>],
    preds: &Tensor4<T>,
) -> Result<(T, Tensor4<T>)> {
    let n = preds.shape().n;
    if targets.len() != n {
        return Err(Error::LengthMismatch {
            what: "batch targets",
            expected: n,
            found: targets.len(),
        });
    }
    let scale = T::one() / T::from_usize_lossy(n);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(preds.data().len());
    for (i, t) in targets.iter().enumerate() {
        let lv = match kind {
            LossKind::Bce => bce(t, preds.sample(i))?,
            LossKind::Cce => cce(t, preds.sample(i))?,
        };
        total += lv.value;
        grad.extend(lv.gradient.into_iter().map(|g| g * scale));
    }
    Ok((total * scale, Tensor4::from_vec(preds.shape(), grad)?))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy<T: Scalar>(labels: &[usize], preds: &Tensor4<T>) -> Result<f64> {
    let n = preds.shape().n;
    if labels.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty batch".into()));
    }
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            what: "accuracy labels",
            expected: n,
            found: labels.len(),
        });
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| argmax(preds.sample(i)) == l)
        .count();
    Ok(hits as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    #[test]
    #[allow(clippy::approx_constant)]
    fn bce_examples() {
        let perfect = bce(&[1.0, 0.0], &[1.0 - 1e-7, 1e-7]).unwrap();
        assert!(perfect.value >= 0.0 && perfect.value < 2e-7);

        let half = bce(&[1.0f64], &[0.5]).unwrap();
        assert!((half.value - 0.693147).abs() < 1e-6);

        let uniform = bce(&[0.0, 1.0, 0.0, 0.0, 0.0], &[0.2; 5]).unwrap();
        let by_hand = -(0.2f64.ln() + 4.0 * 0.8f64.ln()) / 5.0;
        assert!((uniform.value - by_hand).abs() < 1e-15);
        assert!((uniform.value - 0.50040).abs() < 1e-5);

        assert!(bce(&[1.0, 0.0], &[0.5]).is_err());
    }

    #[test]
    fn bce_clips_extremes() {
        let v = bce(&[1.0f64], &[0.0]).unwrap();
        assert!(v.value.is_finite());
        assert!((v.value - -(1e-7f64).ln()).abs() < 1e-9);
        assert_eq!(v.gradient, vec![0.0]);
    }

    #[test]
    fn cce_examples() {
        let v = cce(&[0.0, 1.0, 0.0], &[0.25, 0.5, 0.25]).unwrap();
        assert!((v.value - 2f64.ln()).abs() < 1e-15);
        assert_eq!(v.gradient, vec![0.0, -2.0, 0.0]);
    }

    #[test]
    fn accuracy_examples() {
        let one_hot = Tensor4::from_vec(
            Shape4::new(3, 5, 1, 1),
            vec![
                1., 0., 0., 0., 0., //
                0., 0., 1., 0., 0., //
                0., 0., 0., 0., 1.,
            ],
        )
        .unwrap();
        assert_eq!(accuracy(&[0, 2, 4], &one_hot).unwrap(), 1.0);
        assert!((accuracy(&[0, 2, 3], &one_hot).unwrap() - 2.0 / 3.0).abs() < 1e-15);

        let uniform = Tensor4::filled(Shape4::new(4, 5, 1, 1), 0.2).unwrap();
        assert_eq!(accuracy(&[0, 0, 0, 0], &uniform).unwrap(), 1.0);
        assert!(accuracy::<f64>(&[], &uniform).is_err());
        assert!(accuracy(&[0], &uniform).is_err());
    }

    #[test]
    fn batch_loss_averages_rows() {
        let preds = Tensor4::from_vec(Shape4::new(2, 1, 1, 1), vec![0.5, 0.25]).unwrap();
        let (v, g) = batch_loss(LossKind::Bce, &[vec![1.0], vec![0.0]], &preds).unwrap();
        let expect = (2f64.ln() + -(0.75f64).ln()) / 2.0;
        assert!((v - expect).abs() < 1e-15);
        assert!((g.data()[0] - -1.0).abs() < 1e-15);
        assert!((g.data()[1] - 0.5 / 0.75).abs() < 1e-15);
    }
}
