//! Training-time augmentation: random zoom about the centre followed by
//! independent horizontal and vertical flips.

use fdl_core::Tensor4;
use rand::Rng;

use crate::error::{Error, Result};

pub const ZOOM_MIN: f64 = 0.8;
pub const ZOOM_MAX: f64 = 1.2;
pub const FLIP_PROBABILITY: f64 = 0.5;

/// One concrete draw of augmentation parameters. `zoom > 1` samples a wider
/// source window (content shrinks, borders fill with 0); `zoom < 1` magnifies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub zoom: f64,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        zoom: 1.0,
        flip_horizontal: false,
        flip_vertical: false,
    };

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        AugmentParams {
            zoom: rng.gen_range(ZOOM_MIN..=ZOOM_MAX),
            flip_horizontal: rng.gen_bool(FLIP_PROBABILITY),
            flip_vertical: rng.gen_bool(FLIP_PROBABILITY),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(ZOOM_MIN..=ZOOM_MAX).contains(&self.zoom) {
            return Err(Error::Invalid(format!(
                "zoom {} outside [{ZOOM_MIN}, {ZOOM_MAX}]",
                self.zoom
            )));
        }
        Ok(())
    }
}

/// Draws parameters from `rng` and applies them.
pub fn augment<R: Rng + ?Sized>(x: &Tensor4<f64>, rng: &mut R) -> Tensor4<f64> {
    augment_with(x, &AugmentParams::sample(rng)).expect("sampled parameters are in range")
}

/// Applies explicit parameters to every sample and channel of `x`.
pub fn augment_with(x: &Tensor4<f64>, p: &AugmentParams) -> Result<Tensor4<f64>> {
    p.validate()?;
    let zoomed = if p.zoom == 1.0 {
        x.clone()
    } else {
        zoom(x, p.zoom)
    };
    let s = zoomed.shape();
    if !p.flip_horizontal && !p.flip_vertical {
        return Ok(zoomed);
    }
    Ok(Tensor4::from_fn(s, |i, c, y, xx| {
        let sy = if p.flip_vertical { s.h - 1 - y } else { y };
        let sx = if p.flip_horizontal { s.w - 1 - xx } else { xx };
        zoomed.get(i, c, sy, sx)
    })?)
}

/// Bilinear resample of `src = centre + (dst - centre) * factor` with
/// constant-0 fill outside the frame.
fn zoom(x: &Tensor4<f64>, factor: f64) -> Tensor4<f64> {
    let s = x.shape();
    let taps = |len: usize| -> Vec<(isize, f64)> {
        let centre = (len as f64 - 1.0) / 2.0;
        (0..len)
            .map(|d| {
                let src = centre + (d as f64 - centre) * factor;
                let i0 = src.floor();
                (i0 as isize, src - i0)
            })
            .collect()
    };
    let (ys, xs) = (taps(s.h), taps(s.w));
    Tensor4::from_fn(s, |i, c, y, xx| {
        let at = |yy: isize, xq: isize| {
            if yy < 0 || xq < 0 || yy >= s.h as isize || xq >= s.w as isize {
                0.0
            } else {
                x.get(i, c, yy as usize, xq as usize)
            }
        };
        let (y0, fy) = ys[y];
        let (x0, fx) = xs[xx];
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
        let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    })
    .expect("shape unchanged")
}

#[cfg(test)]
mod tests {
    use super::*;
    use fdl_core::Shape4;

    fn ramp() -> Tensor4<f64> {
        Tensor4::from_fn(Shape4::new(1, 3, 6, 6), |_, c, y, x| {
            ((c * 36 + y * 6 + x) as f64) / 108.0
        })
        .unwrap()
    }

    #[test]
    fn identity_params() {
        let x = ramp();
        assert_eq!(augment_with(&x, &AugmentParams::IDENTITY).unwrap(), x);
    }

    #[test]
    fn flips_are_involutions() {
        let x = ramp();
        for (h, v) in [(true, false), (false, true), (true, true)] {
            let p = AugmentParams {
                zoom: 1.0,
                flip_horizontal: h,
                flip_vertical: v,
            };
            let once = augment_with(&x, &p).unwrap();
            assert_ne!(once, x);
            assert_eq!(augment_with(&once, &p).unwrap(), x);
        }
        let p = AugmentParams {
            flip_horizontal: true,
            ..AugmentParams::IDENTITY
        };
        assert_eq!(
            augment_with(&x, &p).unwrap().get(0, 0, 2, 0),
            x.get(0, 0, 2, 5)
        );
    }

    #[test]
    fn out_of_range_zoom_is_rejected() {
        for zoom in [1.25, 0.75, f64::NAN] {
            let p = AugmentParams {
                zoom,
                ..AugmentParams::IDENTITY
            };
            assert!(augment_with(&ramp(), &p).is_err());
        }
    }

    #[test]
    fn zoom_out_fills_corners_with_zero() {
        let x = Tensor4::filled(Shape4::new(1, 1, 8, 8), 1.0).unwrap();
        let p = AugmentParams {
            zoom: 1.2,
            ..AugmentParams::IDENTITY
        };
        let y = augment_with(&x, &p).unwrap();
        assert!(y.get(0, 0, 0, 0) < 1.0);
        assert_eq!(y.get(0, 0, 4, 4), 1.0);
    }
}
