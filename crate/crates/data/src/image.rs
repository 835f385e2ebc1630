//! 8-bit RGB images and PNG input/output.

use std::path::Path;

use fdl_core::{Shape4, Tensor4};

use crate::error::{Error, Result};

/// Row-major interleaved RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRGB8 {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl ImageRGB8 {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid(format!(
                "image size {width}x{height} must be at least 1x1"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::Invalid(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(ImageRGB8 {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, px: [u8; 3]) -> Result<Self> {
        Self::new(width, height, vec![px; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [[u8; 3]] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    /// One colour plane (0 = red, 1 = green, 2 = blue), row-major.
    pub fn channel(&self, c: usize) -> Vec<u8> {
        self.pixels.iter().map(|p| p[c]).collect()
    }

    pub fn set_channel(&mut self, c: usize, plane: &[u8]) {
        assert_eq!(plane.len(), self.pixels.len(), "plane length");
        for (p, &v) in self.pixels.iter_mut().zip(plane) {
            p[c] = v;
        }
    }

    /// Tensor of shape (1, 3, h, w) with values scaled to [0, 1].
    pub fn to_tensor(&self) -> Tensor4<f64> {
        let (w, h) = (self.width, self.height);
        Tensor4::from_fn(Shape4::new(1, 3, h, w), |_, c, y, x| {
            f64::from(self.pixels[y * w + x][c]) / 255.0
        })
        .expect("image dimensions are non-zero")
    }

    /// Inverse of [`ImageRGB8::to_tensor`]: values are clamped to [0, 1] and
    /// re-quantized by rounding `v * 255`. Uses sample 0 of the batch.
    pub fn from_tensor(t: &Tensor4<f64>) -> Result<Self> {
        let s = t.shape();
        if s.c != 3 {
            return Err(Error::Invalid(format!("expected 3 channels, got {}", s.c)));
        }
        Self::from_fn(s.w, s.h, |x, y| {
            let q = |c| (t.get(0, c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
            [q(0), q(1), q(2)]
        })
    }

    /// Decodes a PNG (8-bit RGB, RGBA, grey or grey+alpha); alpha is dropped.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let rgb = decoded.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let pixels = rgb.pixels().map(|p| p.0).collect();
        Self::new(w, h, pixels)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer size matches");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::Image {
                    path: path.to_path_buf(),
                    message: other.to_string(),
                },
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_scaling() {
        let img = ImageRGB8::new(2, 1, vec![[255, 0, 128], [1, 2, 3]]).unwrap();
        let t = img.to_tensor();
        assert_eq!(t.shape(), Shape4::new(1, 3, 1, 2));
        assert_eq!(t.get(0, 0, 0, 0), 1.0);
        assert_eq!(t.get(0, 1, 0, 0), 0.0);
        assert_eq!(t.get(0, 2, 0, 1), 3.0 / 255.0);
    }

    #[test]
    fn every_byte_survives_the_tensor_round_trip() {
        let img = ImageRGB8::from_fn(256, 1, |x, _| [x as u8, 255 - x as u8, (x * 7 % 256) as u8])
            .unwrap();
        assert_eq!(ImageRGB8::from_tensor(&img.to_tensor()).unwrap(), img);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(ImageRGB8::new(0, 1, vec![]).is_err());
        assert!(ImageRGB8::new(2, 2, vec![[0; 3]; 3]).is_err());
    }
}
