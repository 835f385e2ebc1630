//! The three input filters: untouched RGB, green-only, and per-channel
//! histogram equalization.

use serde::{Deserialize, Serialize};

use crate::image::ImageRGB8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    #[default]
    Rgb,
    Green,
    HighContrast,
}

impl FilterKind {
    pub const ALL: [FilterKind; 3] = [FilterKind::Rgb, FilterKind::Green, FilterKind::HighContrast];

    pub fn as_str(&self) -> &'static str {
        match self {
            FilterKind::Rgb => "rgb",
            FilterKind::Green => "green",
            FilterKind::HighContrast => "high_contrast",
        }
    }

    pub fn apply(&self, img: &ImageRGB8) -> ImageRGB8 {
        match self {
            FilterKind::Rgb => img.clone(),
            FilterKind::Green => green_filter(img),
            FilterKind::HighContrast => high_contrast(img),
        }
    }
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FilterKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rgb" => Ok(FilterKind::Rgb),
            "green" => Ok(FilterKind::Green),
            "high_contrast" | "high-contrast" | "hc" => Ok(FilterKind::HighContrast),
            other => Err(format!(
                "unknown filter `{other}` (expected rgb, green or high_contrast)"
            )),
        }
    }
}

/// Zeroes the red and blue channels; the image keeps three channels.
pub fn green_filter(img: &ImageRGB8) -> ImageRGB8 {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        *p = [0, p[1], 0];
    }
    out
}

/// Classical histogram equalization of one 8-bit plane:
/// `round((cdf(v) - cdf_min) / (N - cdf_min) * 255)`, where `cdf_min` is the
/// smallest non-zero cdf value. Constant planes are returned unchanged.
pub fn equalize_channel(plane: &[u8]) -> Vec<u8> {
    let lut = equalization_lut(plane);
    plane.iter().map(|&v| lut[v as usize]).collect()
}

/// Value map used by [`equalize_channel`]; identity for constant planes.
pub fn equalization_lut(plane: &[u8]) -> [u8; 256] {
    let mut hist = [0usize; 256];
    for &v in plane {
        hist[v as usize] += 1;
    }
    let mut lut = [0u8; 256];
    for (i, l) in lut.iter_mut().enumerate() {
        *l = i as u8;
    }
    let n = plane.len();
    let cdf_min = hist.iter().copied().find(|&h| h > 0).unwrap_or(0);
    if n == cdf_min {
        return lut;
    }
    let denom = (n - cdf_min) as f64;
    let mut cdf = 0;
    for (v, &h) in hist.iter().enumerate() {
        cdf += h;
        if cdf >= cdf_min {
            lut[v] = ((cdf - cdf_min) as f64 / denom * 255.0).round() as u8;
        }
    }
    lut
}

/// Equalizes the red, green and blue planes independently.
pub fn high_contrast(img: &ImageRGB8) -> ImageRGB8 {
    let mut out = img.clone();
    for c in 0..3 {
        out.set_channel(c, &equalize_channel(&img.channel(c)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn green_examples() {
        let img = ImageRGB8::new(1, 1, vec![[10, 20, 30]]).unwrap();
        assert_eq!(green_filter(&img).pixels(), &[[0, 20, 0]]);
        let black = ImageRGB8::filled(3, 2, [0, 0, 0]).unwrap();
        assert_eq!(green_filter(&black), black);
        let green = ImageRGB8::filled(3, 2, [0, 200, 0]).unwrap();
        assert_eq!(green_filter(&green), green);
    }

    #[test]
    fn equalize_examples() {
        assert_eq!(equalize_channel(&[0, 85, 170, 255]), vec![0, 85, 170, 255]);
        assert_eq!(equalize_channel(&[10, 10, 10, 200]), vec![0, 0, 0, 255]);
        assert_eq!(equalize_channel(&[42; 9]), vec![42; 9]);
    }

    #[test]
    fn equalize_matches_hand_formula() {
        // cdf over values 3,3,7,9,9,9 = (2,3,6), cdf_min 2, N - cdf_min 4
        let out = equalize_channel(&[9, 3, 7, 9, 3, 9]);
        let f = |c: f64| ((c - 2.0) / 4.0 * 255.0).round() as u8;
        assert_eq!(out, vec![f(6.0), f(2.0), f(3.0), f(6.0), f(2.0), f(6.0)]);
    }

    #[test]
    fn filter_names() {
        for f in FilterKind::ALL {
            assert_eq!(f.as_str().parse::<FilterKind>().unwrap(), f);
        }
        assert_eq!(
            "hc".parse::<FilterKind>().unwrap(),
            FilterKind::HighContrast
        );
        assert!("blue".parse::<FilterKind>().is_err());
    }
}
