//! Synthetic fundus-like images with grade-dependent lesions, for tests,
//! demos and fixtures where the real dataset is unavailable.
//!
//! Grade g draws g bright exudate spots and 2g dark haemorrhage dots on an
//! orange disc with a bright optic spot; positions, tint and noise are seeded.

use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::image::ImageRGB8;

/// One synthetic image of side `size` for `grade`.
pub fn fundus(size: usize, grade: usize, seed: u64) -> ImageRGB8 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let centre = (s - 1.0) / 2.0;
    let radius = s * 0.47;
    let tint: f64 = rng.gen_range(0.85..1.15);
    let optic = (rng.gen_range(0.25..0.4) * s, rng.gen_range(0.4..0.6) * s);
    let spot_r = (s * 0.06).max(1.0);
    let mut lesions: Vec<(f64, f64, f64, [f64; 3])> = Vec::new();
    let mut place = |rng: &mut ChaCha8Rng, colour: [f64; 3], r: f64| {
        let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let d = rng.gen_range(0.0..0.75) * radius;
        lesions.push((centre + d * a.cos(), centre + d * a.sin(), r, colour));
    };
    for _ in 0..grade {
        place(&mut rng, [255.0, 240.0, 120.0], spot_r * 1.2);
    }
    for _ in 0..2 * grade {
        place(&mut rng, [70.0, 10.0, 10.0], spot_r);
    }
    let noise: Vec<f64> = (0..size * size).map(|_| rng.gen_range(-6.0..6.0)).collect();
    ImageRGB8::from_fn(size, size, |x, y| {
        let (fx, fy) = (x as f64, y as f64);
        let r = ((fx - centre).powi(2) + (fy - centre).powi(2)).sqrt();
        if r > radius {
            return [2, 2, 2];
        }
        let fall = 1.0 - 0.5 * r / radius;
        let od = (-((fx - optic.0).powi(2) + (fy - optic.1).powi(2)) / (s * s * 0.004)).exp();
        let mut c = [
            (190.0 * fall * tint + 60.0 * od),
            (80.0 * fall + 140.0 * od),
            (30.0 * fall + 90.0 * od),
        ];
        for &(lx, ly, lr, colour) in &lesions {
            let d2 = (fx - lx).powi(2) + (fy - ly).powi(2);
            let w = (-d2 / (lr * lr)).exp();
            for k in 0..3 {
                c[k] = c[k] * (1.0 - w) + colour[k] * w;
            }
        }
        let n = noise[y * size + x];
        [0, 1, 2].map(|k| (c[k] + n).round().clamp(0.0, 255.0) as u8)
    })
    .expect("size is non-zero")
}

/// Writes `per_class` images per grade as `<dir>/images/syn_<g>_<i>.png`
/// plus `<dir>/train.csv`. Returns the CSV path.
pub fn write_dataset(
    dir: &Path,
    per_class: usize,
    size: usize,
    seed: u64,
) -> Result<std::path::PathBuf> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let csv_path = dir.join("train.csv");
    let mut csv = String::from("id_code,diagnosis\n");
    // interleave grades so the manifest order is not sorted by class
    for i in 0..per_class {
        for g in 0..NUM_CLASSES {
            let id = format!("syn_{g}_{i:03}");
            let img_seed = seed
                .wrapping_mul(1_000_003)
                .wrapping_add((g * 10_007 + i) as u64);
            fundus(size, g, img_seed).save_png(images.join(format!("{id}.png")))?;
            csv.push_str(&format!("{id},{g}\n"));
        }
    }
    let mut f = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    f.write_all(csv.as_bytes())
        .map_err(|e| Error::io(&csv_path, e))?;
    Ok(csv_path)
}
