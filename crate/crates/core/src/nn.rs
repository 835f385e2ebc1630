//! Differentiable layer primitives. Each forward function has a matching
//! `*_backward` that maps an upstream gradient to gradients of the inputs
//! and parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Whether a stochastic / statistics-dependent layer runs in training or
/// inference behaviour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

pub fn relu<T: Scalar>(z: &Tensor4<T>) -> Tensor4<T> {
    z.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `grad` where the pre-activation was strictly positive. The
/// derivative at exactly zero is taken as 0.
pub fn relu_backward<T: Scalar>(z: &Tensor4<T>, grad: &Tensor4<T>) -> Result<Tensor4<T>> {
    if z.shape() != grad.shape() {
        return Err(Error::ShapeMismatch {
            left: z.shape(),
            right: grad.shape(),
        });
    }
    let data = z
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&zv, &g)| if zv > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::from_vec(z.shape(), data)
}

/// Numerically stable softmax (the maximum is subtracted before exponentiating).
pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Vector-Jacobian product of softmax given its output `y`:
/// `dz_i = y_i (dy_i - Σ_j y_j dy_j)`.
pub fn softmax_backward<T: Scalar>(y: &[T], dy: &[T]) -> Result<Vec<T>> {
    if y.len() != dy.len() {
        return Err(Error::LengthMismatch {
            what: "softmax gradient",
            expected: y.len(),
            found: dy.len(),
        });
    }
    let dot: T = y.iter().zip(dy).map(|(&a, &b)| a * b).sum();
    Ok(y.iter().zip(dy).map(|(&yi, &gi)| yi * (gi - dot)).collect())
}

/// Row-wise softmax over the flattened features of every sample.
pub fn softmax_rows<T: Scalar>(z: &Tensor4<T>) -> Tensor4<T> {
    let s = z.shape();
    let data = (0..s.n).flat_map(|i| softmax(z.sample(i))).collect();
    Tensor4::from_vec(s, data).expect("softmax preserves shape")
}

pub fn softmax_rows_backward<T: Scalar>(y: &Tensor4<T>, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
    if y.shape() != dy.shape() {
        return Err(Error::ShapeMismatch {
            left: y.shape(),
            right: dy.shape(),
        });
    }
    let mut data = Vec::with_capacity(y.data().len());
    for i in 0..y.shape().n {
        data.extend(softmax_backward(y.sample(i), dy.sample(i))?);
    }
    Tensor4::from_vec(y.shape(), data)
}

/// Affine layer parameters. `weights` is an `inputs × units` matrix stored
/// row-major, so the weight from input `i` to unit `j` is
/// `weights[i * units + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams<T> {
    pub inputs: usize,
    pub units: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DenseParams<T> {
    pub fn new(inputs: usize, units: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weights.len() != inputs * units {
            return Err(Error::LengthMismatch {
                what: "dense weights",
                expected: inputs * units,
                found: weights.len(),
            });
        }
        if bias.len() != units {
            return Err(Error::LengthMismatch {
                what: "dense bias",
                expected: units,
                found: bias.len(),
            });
        }
        Ok(DenseParams {
            inputs,
            units,
            weights,
            bias,
        })
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// `z = Wᵀx + b` for each sample, with `x` the flattened (c·h·w) features.
/// Returns shape (n, units, 1, 1).
pub fn dense_forward<T: Scalar>(x: &Tensor4<T>, p: &DenseParams<T>) -> Result<Tensor4<T>> {
    dense_forward_raw(x, p.inputs, p.units, &p.weights, &p.bias)
}

pub(crate) fn dense_forward_raw<T: Scalar>(
    x: &Tensor4<T>,
    inputs: usize,
    units: usize,
    weights: &[T],
    bias: &[T],
) -> Result<Tensor4<T>> {
    let s = x.shape();
    if s.sample_len() != inputs {
        return Err(Error::LengthMismatch {
            what: "dense input width",
            expected: inputs,
            found: s.sample_len(),
        });
    }
    let mut out = Vec::with_capacity(s.n * units);
    for i in 0..s.n {
        let mut z = bias.to_vec();
        for (k, &xv) in x.sample(i).iter().enumerate() {
            let row = &weights[k * units..(k + 1) * units];
            for (zj, &w) in z.iter_mut().zip(row) {
                *zj += xv * w;
            }
        }
        out.extend(z);
    }
    Tensor4::from_vec(Shape4::new(s.n, units, 1, 1), out)
}

#[derive(Clone, Debug)]
pub struct DenseGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub input: Tensor4<T>,
}

pub fn dense_backward<T: Scalar>(
    x: &Tensor4<T>,
    p: &DenseParams<T>,
    grad_out: &Tensor4<T>,
) -> Result<DenseGrads<T>> {
    dense_backward_raw(x, p.inputs, p.units, &p.weights, grad_out)
}

pub(crate) fn dense_backward_raw<T: Scalar>(
    x: &Tensor4<T>,
    inputs: usize,
    units: usize,
    weights: &[T],
    grad_out: &Tensor4<T>,
) -> Result<DenseGrads<T>> {
    let s = x.shape();
    let expected = Shape4::new(s.n, units, 1, 1);
    if grad_out.shape() != expected || s.sample_len() != inputs {
        return Err(Error::ShapeMismatch {
            left: expected,
            right: grad_out.shape(),
        });
    }
    let mut gw = vec![T::zero(); inputs * units];
    let mut gb = vec![T::zero(); units];
    let mut gx = Vec::with_capacity(s.len());
    for i in 0..s.n {
        let g = grad_out.sample(i);
        for (b, &gj) in gb.iter_mut().zip(g) {
            *b += gj;
        }
        for (k, &xv) in x.sample(i).iter().enumerate() {
            let row = &weights[k * units..(k + 1) * units];
            let grow = &mut gw[k * units..(k + 1) * units];
            let mut acc = T::zero();
            for j in 0..units {
                grow[j] += xv * g[j];
                acc += row[j] * g[j];
            }
            gx.push(acc);
        }
    }
    Ok(DenseGrads {
        weights: gw,
        bias: gb,
        input: Tensor4::from_vec(s, gx)?,
    })
}

/// Per-element multipliers applied by a dropout forward pass: 0 for dropped
/// elements and `1 / (1 - rate)` for survivors. An empty mask means the pass
/// was the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<T> {
    pub scale: Vec<T>,
}

/// Inverted dropout: training mode zeroes each element with probability
/// `rate` and rescales survivors so the expectation is unchanged; eval mode
/// is the identity.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    x: &Tensor4<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor4<T>, DropoutMask<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), DropoutMask { scale: Vec::new() }));
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let scale: Vec<T> = (0..x.data().len())
        .map(|_| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let out = x.data().iter().zip(&scale).map(|(&v, &m)| v * m).collect();
    Ok((Tensor4::from_vec(x.shape(), out)?, DropoutMask { scale }))
}

pub fn dropout_backward<T: Scalar>(mask: &DropoutMask<T>, grad: &Tensor4<T>) -> Result<Tensor4<T>> {
    if mask.scale.is_empty() {
        return Ok(grad.clone());
    }
    if mask.scale.len() != grad.data().len() {
        return Err(Error::LengthMismatch {
            what: "dropout mask",
            expected: mask.scale.len(),
            found: grad.data().len(),
        });
    }
    let data = grad
        .data()
        .iter()
        .zip(&mask.scale)
        .map(|(&g, &m)| g * m)
        .collect();
    Tensor4::from_vec(grad.shape(), data)
}

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.9;

/// Running per-channel moments used by batch normalization at inference.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::lit(BATCHNORM_MOMENTUM),
            eps: T::lit(BATCHNORM_EPS),
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

/// What the batchnorm backward pass needs from its forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub mode: Mode,
    pub normalized: Tensor4<T>,
    pub inv_std: Vec<T>,
}

/// Per-channel mean and (biased) variance over (n, h, w).
pub fn channel_moments<T: Scalar>(x: &Tensor4<T>) -> (Vec<T>, Vec<T>) {
    let s = x.shape();
    let count = T::from_usize_lossy(s.n * s.plane());
    let mut mean = vec![T::zero(); s.c];
    let mut var = vec![T::zero(); s.c];
    for (k, plane) in x.data().chunks_exact(s.plane()).enumerate() {
        mean[k % s.c] += plane.iter().copied().sum::<T>();
    }
    mean.iter_mut().for_each(|m| *m /= count);
    for (k, plane) in x.data().chunks_exact(s.plane()).enumerate() {
        let m = mean[k % s.c];
        var[k % s.c] += plane.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
    }
    var.iter_mut().for_each(|v| *v /= count);
    (mean, var)
}

/// Batch normalization over (n, h, w) per channel. In training mode the
/// running moments are blended toward the batch moments with
/// `running = momentum·running + (1 - momentum)·batch`.
pub fn batchnorm2d<T: Scalar>(
    x: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor4<T>, BatchNormCache<T>)> {
    let s = x.shape();
    for len in [gamma.len(), beta.len(), state.channels()] {
        if len != s.c {
            return Err(Error::ChannelMismatch {
                expected: len,
                found: s.c,
            });
        }
    }
    let (mean, var) = match mode {
        Mode::Train => {
            let (mean, var) = channel_moments(x);
            let mom = state.momentum;
            for k in 0..s.c {
                state.running_mean[k] = mom * state.running_mean[k] + (T::one() - mom) * mean[k];
                state.running_var[k] = mom * state.running_var[k] + (T::one() - mom) * var[k];
            }
            (mean, var)
        }
        Mode::Eval => (state.running_mean.clone(), state.running_var.clone()),
    };
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::one() / (v + state.eps).sqrt())
        .collect();
    let mut normalized = Vec::with_capacity(s.len());
    let mut out = Vec::with_capacity(s.len());
    for (k, plane) in x.data().chunks_exact(s.plane()).enumerate() {
        let c = k % s.c;
        for &v in plane {
            let xh = (v - mean[c]) * inv_std[c];
            normalized.push(xh);
            out.push(gamma[c] * xh + beta[c]);
        }
    }
    Ok((
        Tensor4::from_vec(s, out)?,
        BatchNormCache {
            mode,
            normalized: Tensor4::from_vec(s, normalized)?,
            inv_std,
        },
    ))
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<T> {
    pub input: Tensor4<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub fn batchnorm2d_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &[T],
    grad: &Tensor4<T>,
) -> Result<BatchNormGrads<T>> {
    let s = grad.shape();
    if s != cache.normalized.shape() {
        return Err(Error::ShapeMismatch {
            left: cache.normalized.shape(),
            right: s,
        });
    }
    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    let xh = cache.normalized.data();
    for (k, (gp, hp)) in grad
        .data()
        .chunks_exact(s.plane())
        .zip(xh.chunks_exact(s.plane()))
        .enumerate()
    {
        let c = k % s.c;
        for (&g, &h) in gp.iter().zip(hp) {
            dgamma[c] += g * h;
            dbeta[c] += g;
        }
    }
    let count = T::from_usize_lossy(s.n * s.plane());
    let mut dx = Vec::with_capacity(s.len());
    for (k, (gp, hp)) in grad
        .data()
        .chunks_exact(s.plane())
        .zip(xh.chunks_exact(s.plane()))
        .enumerate()
    {
        let c = k % s.c;
        let a = gamma[c] * cache.inv_std[c];
        match cache.mode {
            Mode::Eval => dx.extend(gp.iter().map(|&g| a * g)),
            Mode::Train => {
                let (sum_g, sum_gh) = (dbeta[c] / count, dgamma[c] / count);
                dx.extend(
                    gp.iter()
                        .zip(hp)
                        .map(|(&g, &h)| a * (g - sum_g - h * sum_gh)),
                );
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor4::from_vec(s, dx)?,
        gamma: dgamma,
        beta: dbeta,
    })
}

/// Exponential of a vector under the convention `vⁿ = ‖v‖ⁿ` for even `n`
/// and `‖v‖ⁿ⁻¹ v` for odd `n`, so the result splits into a scalar part and a
/// part parallel to `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct VecExpValue<T> {
    pub scalar_part: T,
    pub vector_part: Vec<T>,
}

/// Closed form `cosh‖v‖ + (v/‖v‖) sinh‖v‖`, with `e⁰ = 1`.
pub fn vexp<T: Scalar>(v: &[T]) -> VecExpValue<T> {
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if norm == T::zero() {
        return VecExpValue {
            scalar_part: T::one(),
            vector_part: vec![T::zero(); v.len()],
        };
    }
    let k = norm.sinh() / norm;
    VecExpValue {
        scalar_part: norm.cosh(),
        vector_part: v.iter().map(|&x| k * x).collect(),
    }
}
