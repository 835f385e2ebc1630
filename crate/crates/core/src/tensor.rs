//! Dense NCHW tensors and the convolution / pooling / join primitives the
//! layers are assembled from.
//!
//! All operations are pure: they borrow their inputs and return fresh
//! tensors, so they can be called from any number of threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Extents of a rank-4 tensor in (batch, channel, row, column) order.
///
/// Batch, height and width are at least 1. A channel count of 0 is allowed so
/// that an empty feature stack can be the neutral element of
/// [`concat_channels`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one sample (c·h·w).
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn with_batch(self, n: usize) -> Self {
        Shape4 { n, ..self }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::InvalidShape(*self));
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Rank-4 array stored contiguously; element (i, j, y, x) lives at
/// `((i·c + j)·h + y)·w + x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::DataLength {
                shape,
                expected: shape.len(),
                found: data.len(),
            });
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn zeros(shape: Shape4) -> Result<Self> {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: Shape4, value: T) -> Result<Self> {
        shape.validate()?;
        Ok(Tensor4 {
            shape,
            data: vec![value; shape.len()],
        })
    }

    pub fn from_fn(
        shape: Shape4,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Result<Self> {
        shape.validate()?;
        let mut data = Vec::with_capacity(shape.len());
        for i in 0..shape.n {
            for j in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(i, j, y, x));
                    }
                }
            }
        }
        Ok(Tensor4 { shape, data })
    }

    #[inline]
    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        ((i * s.c + j) * s.h + y) * s.w + x
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, y: usize, x: usize) -> T {
        self.data[self.index(i, j, y, x)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, y: usize, x: usize, v: T) {
        let k = self.index(i, j, y, x);
        self.data[k] = v;
    }

    /// Contiguous slice holding sample `i`.
    pub fn sample(&self, i: usize) -> &[T] {
        let len = self.shape.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn reshape(self, shape: Shape4) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, a: T) -> Self {
        self.map(|v| v * a)
    }

    pub fn is_finite(&self) -> bool {
        crate::scalar::all_finite(&self.data)
    }

    /// Stacks single-sample tensors with identical (c, h, w) along the batch axis.
    pub fn stack(samples: &[&Tensor4<T>]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero tensors".into()))?;
        let per = first.shape.with_batch(1);
        let mut data = Vec::with_capacity(per.len() * samples.len());
        for s in samples {
            if s.shape.c != per.c || s.shape.h != per.h || s.shape.w != per.w {
                return Err(Error::ShapeMismatch {
                    left: per,
                    right: s.shape,
                });
            }
            data.extend_from_slice(&s.data);
        }
        let n: usize = samples.iter().map(|s| s.shape.n).sum();
        Self::from_vec(per.with_batch(n), data)
    }

    /// Copies channels `start..start + count` into a new tensor.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Self> {
        let s = self.shape;
        if start + count > s.c {
            return Err(Error::ChannelMismatch {
                expected: start + count,
                found: s.c,
            });
        }
        let plane = s.plane();
        let mut data = Vec::with_capacity(s.n * count * plane);
        for i in 0..s.n {
            let base = (i * s.c + start) * plane;
            data.extend_from_slice(&self.data[base..base + count * plane]);
        }
        Ok(Tensor4 {
            shape: Shape4::new(s.n, count, s.h, s.w),
            data,
        })
    }
}

/// Output extent of a sliding window: `floor((w - k + 2p) / s) + 1`.
pub fn out_size(w: usize, k: usize, p: usize, s: usize) -> Result<usize> {
    let err = Error::InvalidGeometry {
        input: w,
        kernel: k,
        padding: p,
        stride: s,
    };
    if w == 0 || k == 0 || s == 0 {
        return Err(err);
    }
    let padded = w + 2 * p;
    if padded < k {
        return Err(err);
    }
    Ok((padded - k) / s + 1)
}

/// Convolution geometry. Padding is symmetric and filled with zeros.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    /// Flip the kernel before sliding it, turning the cross-correlation into
    /// a true convolution `G[m,n] = Σ h[j,k] f[m-j, n-k]`.
    #[serde(default)]
    pub flip_kernel: bool,
}

impl ConvSpec {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            kernel: (kernel, kernel),
            stride,
            padding,
            flip_kernel: false,
        }
    }

    /// Odd square kernel with stride 1 and padding that preserves the extent.
    pub fn same(kernel: usize) -> Self {
        Self::new(kernel, 1, kernel / 2)
    }

    pub fn flipped(self) -> Self {
        ConvSpec {
            flip_kernel: true,
            ..self
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            out_size(h, self.kernel.0, self.padding, self.stride)?,
            out_size(w, self.kernel.1, self.padding, self.stride)?,
        ))
    }
}

fn check_conv_args<T: Scalar>(
    input: &Tensor4<T>,
    kernels: &Tensor4<T>,
    spec: &ConvSpec,
) -> Result<(usize, usize)> {
    let ks = kernels.shape();
    if input.shape().c != ks.c {
        return Err(Error::ChannelMismatch {
            expected: ks.c,
            found: input.shape().c,
        });
    }
    if (ks.h, ks.w) != spec.kernel {
        return Err(Error::InvalidArgument(format!(
            "kernel tensor is {}x{} but spec declares {}x{}",
            ks.h, ks.w, spec.kernel.0, spec.kernel.1
        )));
    }
    if spec.stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    spec.output_hw(input.shape().h, input.shape().w)
}

fn flip_spatial<T: Scalar>(kernels: &Tensor4<T>) -> Tensor4<T> {
    let s = kernels.shape();
    Tensor4::from_fn(s, |o, i, y, x| kernels.get(o, i, s.h - 1 - y, s.w - 1 - x))
        .expect("flip preserves a valid shape")
}

/// Output positions `o` in `0..out` for which `o·s + k - p` lands inside `0..extent`.
#[inline]
fn valid_range(out: usize, extent: usize, k: usize, p: usize, s: usize) -> (usize, usize) {
    let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
    let hi = if extent + p > k {
        ((extent - 1 + p - k) / s + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// 2-D cross-correlation (or convolution with `spec.flip_kernel`) of an
/// NCHW input with `(c_out, c_in, kh, kw)` kernels plus a per-output-channel
/// bias.
pub fn conv2d<T: Scalar>(
    input: &Tensor4<T>,
    kernels: &Tensor4<T>,
    bias: &[T],
    spec: &ConvSpec,
) -> Result<Tensor4<T>> {
    let (oh, ow) = check_conv_args(input, kernels, spec)?;
    let ks = kernels.shape();
    if bias.len() != ks.n {
        return Err(Error::LengthMismatch {
            what: "conv bias",
            expected: ks.n,
            found: bias.len(),
        });
    }
    let flipped;
    let kernels = if spec.flip_kernel {
        flipped = flip_spatial(kernels);
        &flipped
    } else {
        kernels
    };
    let is = input.shape();
    let (s, p) = (spec.stride, spec.padding);
    let out_shape = Shape4::new(is.n, ks.n, oh, ow);
    let mut out = vec![T::zero(); out_shape.len()];
    let kd = kernels.data();
    let xd = input.data();

    for i in 0..is.n {
        for o in 0..ks.n {
            let plane = &mut out[(i * ks.n + o) * oh * ow..(i * ks.n + o + 1) * oh * ow];
            plane.iter_mut().for_each(|v| *v = bias[o]);
            for c in 0..is.c {
                let xplane = &xd[(i * is.c + c) * is.h * is.w..(i * is.c + c + 1) * is.h * is.w];
                for ky in 0..ks.h {
                    let (y0, y1) = valid_range(oh, is.h, ky, p, s);
                    for kx in 0..ks.w {
                        let wv = kd[((o * ks.c + c) * ks.h + ky) * ks.w + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (x0, x1) = valid_range(ow, is.w, kx, p, s);
                        for oy in y0..y1 {
                            let iy = oy * s + ky - p;
                            let orow = &mut plane[oy * ow..(oy + 1) * ow];
                            let xrow = &xplane[iy * is.w..(iy + 1) * is.w];
                            for ox in x0..x1 {
                                orow[ox] += wv * xrow[ox * s + kx - p];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor4::from_vec(out_shape, out)
}

/// Gradients of [`conv2d`] with respect to its three arguments.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor4<T>,
    pub kernels: Tensor4<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    kernels: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>> {
    let (oh, ow) = check_conv_args(input, kernels, spec)?;
    let is = input.shape();
    let ks = kernels.shape();
    let expected = Shape4::new(is.n, ks.n, oh, ow);
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            left: expected,
            right: grad_out.shape(),
        });
    }
    let flipped;
    let kern = if spec.flip_kernel {
        flipped = flip_spatial(kernels);
        &flipped
    } else {
        kernels
    };
    let (s, p) = (spec.stride, spec.padding);
    let mut gx = vec![T::zero(); is.len()];
    let mut gk = vec![T::zero(); ks.len()];
    let mut gb = vec![T::zero(); ks.n];
    let kd = kern.data();
    let xd = input.data();
    let gd = grad_out.data();

    for i in 0..is.n {
        for o in 0..ks.n {
            let gplane = &gd[(i * ks.n + o) * oh * ow..(i * ks.n + o + 1) * oh * ow];
            gb[o] += gplane.iter().copied().sum::<T>();
            for c in 0..is.c {
                let base = (i * is.c + c) * is.h * is.w;
                for ky in 0..ks.h {
                    let (y0, y1) = valid_range(oh, is.h, ky, p, s);
                    for kx in 0..ks.w {
                        let kidx = ((o * ks.c + c) * ks.h + ky) * ks.w + kx;
                        let wv = kd[kidx];
                        let (x0, x1) = valid_range(ow, is.w, kx, p, s);
                        let mut acc = T::zero();
                        for oy in y0..y1 {
                            let row = base + (oy * s + ky - p) * is.w;
                            let grow = &gplane[oy * ow..(oy + 1) * ow];
                            for (ox, &g) in grow.iter().enumerate().take(x1).skip(x0) {
                                let xi = row + ox * s + kx - p;
                                acc += g * xd[xi];
                                gx[xi] += g * wv;
                            }
                        }
                        gk[kidx] += acc;
                    }
                }
            }
        }
    }
    let mut kernels_grad = Tensor4::from_vec(ks, gk)?;
    if spec.flip_kernel {
        kernels_grad = flip_spatial(&kernels_grad);
    }
    Ok(ConvGrads {
        input: Tensor4::from_vec(is, gx)?,
        kernels: kernels_grad,
        bias: gb,
    })
}

/// Mean over each spatial plane, giving shape (n, c, 1, 1).
pub fn global_avg_pool<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    let s = input.shape();
    let denom = T::from_usize_lossy(s.plane());
    let data = input
        .data()
        .chunks_exact(s.plane())
        .map(|plane| plane.iter().copied().sum::<T>() / denom)
        .collect();
    Tensor4::from_vec(Shape4::new(s.n, s.c, 1, 1), data).expect("pooled shape is valid")
}

pub fn global_avg_pool_backward<T: Scalar>(
    input_shape: Shape4,
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let expected = Shape4::new(input_shape.n, input_shape.c, 1, 1);
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            left: expected,
            right: grad_out.shape(),
        });
    }
    let plane = input_shape.plane();
    let denom = T::from_usize_lossy(plane);
    let mut data = Vec::with_capacity(input_shape.len());
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g / denom, plane));
    }
    Tensor4::from_vec(input_shape, data)
}

/// 2×2 average pooling with stride 2. Odd extents are padded on the
/// bottom/right by replicating the last row/column, so the output extent is
/// `ceil(extent / 2)`.
pub fn avg_pool2d<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    let s = input.shape();
    let (oh, ow) = (s.h.div_ceil(2), s.w.div_ceil(2));
    let quarter = T::lit(0.25);
    let out_shape = Shape4::new(s.n, s.c, oh, ow);
    let mut out = Vec::with_capacity(out_shape.len());
    for plane in input.data().chunks_exact(s.plane()) {
        for oy in 0..oh {
            let (ya, yb) = (2 * oy, (2 * oy + 1).min(s.h - 1));
            for ox in 0..ow {
                let (xa, xb) = (2 * ox, (2 * ox + 1).min(s.w - 1));
                let sum = plane[ya * s.w + xa]
                    + plane[ya * s.w + xb]
                    + plane[yb * s.w + xa]
                    + plane[yb * s.w + xb];
                out.push(sum * quarter);
            }
        }
    }
    Tensor4::from_vec(out_shape, out).expect("pooled shape is valid")
}

pub fn avg_pool2d_backward<T: Scalar>(
    input_shape: Shape4,
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let s = input_shape;
    let (oh, ow) = (s.h.div_ceil(2), s.w.div_ceil(2));
    let expected = Shape4::new(s.n, s.c, oh, ow);
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            left: expected,
            right: grad_out.shape(),
        });
    }
    let quarter = T::lit(0.25);
    let mut gx = vec![T::zero(); s.len()];
    for (gplane, xplane) in grad_out
        .data()
        .chunks_exact(oh * ow)
        .zip(gx.chunks_exact_mut(s.plane()))
    {
        for oy in 0..oh {
            let (ya, yb) = (2 * oy, (2 * oy + 1).min(s.h - 1));
            for ox in 0..ow {
                let (xa, xb) = (2 * ox, (2 * ox + 1).min(s.w - 1));
                let g = gplane[oy * ow + ox] * quarter;
                xplane[ya * s.w + xa] += g;
                xplane[ya * s.w + xb] += g;
                xplane[yb * s.w + xa] += g;
                xplane[yb * s.w + xb] += g;
            }
        }
    }
    Tensor4::from_vec(s, gx)
}

/// Joins along the channel axis with `a`'s channels first.
pub fn concat_channels<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    concat_many(&[a, b])
}

pub fn concat_many<T: Scalar>(parts: &[&Tensor4<T>]) -> Result<Tensor4<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot concatenate zero tensors".into()))?
        .shape();
    for p in parts {
        let s = p.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::ShapeMismatch {
                left: first,
                right: s,
            });
        }
    }
    let c: usize = parts.iter().map(|p| p.shape().c).sum();
    let shape = Shape4::new(first.n, c, first.h, first.w);
    let mut data = Vec::with_capacity(shape.len());
    for i in 0..first.n {
        for p in parts {
            data.extend_from_slice(p.sample(i));
        }
    }
    Tensor4::from_vec(shape, data)
}

/// Inverse of [`concat_many`]: splits `t` into consecutive channel groups.
pub fn split_channels<T: Scalar>(t: &Tensor4<T>, counts: &[usize]) -> Result<Vec<Tensor4<T>>> {
    let total: usize = counts.iter().sum();
    if total != t.shape().c {
        return Err(Error::ChannelMismatch {
            expected: total,
            found: t.shape().c,
        });
    }
    let mut start = 0;
    counts
        .iter()
        .map(|&c| {
            let part = t.slice_channels(start, c);
            start += c;
            part
        })
        .collect()
}

pub fn add<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            left: a.shape(),
            right: b.shape(),
        });
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x + y)
        .collect();
    Tensor4::from_vec(a.shape(), data)
}
