//! Bilinear resampling with half-pixel centres.

use crate::image::ImageRGB8;

/// Default side length fed to the networks.
pub const DEFAULT_SIZE: usize = 224;

/// Source coordinate and blend weight for one destination index. Samples
/// outside the source are clamped to the border.
fn taps(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

/// Resizes to `width × height`. Same-size input is returned unchanged.
pub fn resize(img: &ImageRGB8, width: usize, height: usize) -> ImageRGB8 {
    assert!(width > 0 && height > 0, "target size must be at least 1x1");
    if img.width() == width && img.height() == height {
        return img.clone();
    }
    let xs: Vec<_> = (0..width).map(|x| taps(x, img.width(), width)).collect();
    let ys: Vec<_> = (0..height).map(|y| taps(y, img.height(), height)).collect();
    ImageRGB8::from_fn(width, height, |x, y| {
        let (x0, x1, fx) = xs[x];
        let (y0, y1, fy) = ys[y];
        let (p00, p01, p10, p11) = (
            img.get(x0, y0),
            img.get(x1, y0),
            img.get(x0, y1),
            img.get(x1, y1),
        );
        let mut out = [0u8; 3];
        for c in 0..3 {
            let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p01[c]) * fx;
            let bottom = f64::from(p10[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
            out[c] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
        }
        out
    })
    .expect("target size is non-zero")
}

/// Square resize.
pub fn resize_square(img: &ImageRGB8, size: usize) -> ImageRGB8 {
    resize(img, size, size)
}
