//! Bit-exact comparisons against frozen reference outputs. The references
//! were produced by `cargo test -p fdl-data --test goldens -- --ignored`
//! after the hand-computed filter and resize cases passed, and are not
//! regenerated by the normal suite.

use std::path::PathBuf;

use fdl_data::{equalize_channel, green_filter, high_contrast, resize, ImageRGB8};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// 16×16 fundus-like crop: dark surround, reddish disc brightening toward
/// an off-centre optic spot, two darker vessel lines.
fn synthetic_fundus() -> ImageRGB8 {
    ImageRGB8::from_fn(16, 16, |x, y| {
        let (dx, dy) = (x as f64 - 7.5, y as f64 - 7.5);
        let r = (dx * dx + dy * dy).sqrt();
        if r > 7.5 {
            return [3, 2, 1];
        }
        let (ox, oy) = (x as f64 - 10.0, y as f64 - 6.0);
        let spot = (-(ox * ox + oy * oy) / 6.0).exp();
        let vessel = x == 5 || y == 11 || x + y == 20;
        let dim = if vessel { 0.6 } else { 1.0 };
        let fall = 1.0 - r / 12.0;
        let red = (150.0 * fall + 100.0 * spot) * dim;
        let green = (60.0 * fall + 150.0 * spot) * dim;
        let blue = (20.0 * fall + 90.0 * spot) * dim;
        [red.round() as u8, green.round() as u8, blue.round() as u8]
    })
    .unwrap()
}

fn gradient4() -> ImageRGB8 {
    ImageRGB8::from_fn(4, 4, |x, y| {
        [(x * 85) as u8, (y * 85) as u8, ((x + y) * 40) as u8]
    })
    .unwrap()
}

fn assert_matches(actual: &ImageRGB8, name: &str) {
    let golden = ImageRGB8::load_png(fixture(name)).unwrap();
    assert_eq!(
        (actual.width(), actual.height()),
        (golden.width(), golden.height())
    );
    let max_dev = actual
        .pixels()
        .iter()
        .zip(golden.pixels())
        .flat_map(|(a, g)| (0..3).map(move |c| a[c].abs_diff(g[c])))
        .max()
        .unwrap();
    assert_eq!(max_dev, 0, "{name}");
}

#[test]
fn fundus_input_fixture_is_stable() {
    assert_matches(&synthetic_fundus(), "fundus16.png");
}

#[test]
fn green_filter_golden() {
    assert_matches(&green_filter(&synthetic_fundus()), "fundus16_green.png");
}

#[test]
fn high_contrast_golden() {
    let img = synthetic_fundus();
    let hc = high_contrast(&img);
    assert_matches(&hc, "fundus16_high_contrast.png");
    assert_eq!(hc.channel(1), equalize_channel(&img.channel(1)));
}

#[test]
fn resize_gradient_golden() {
    let big = resize(&gradient4(), 224, 224);
    assert_eq!(big.get(0, 0), gradient4().get(0, 0));
    assert_eq!(big.get(223, 223), gradient4().get(3, 3));
    assert_matches(&big, "gradient4_224.png");
}

#[test]
#[ignore = "rewrites the frozen reference images"]
fn write_goldens() {
    let img = synthetic_fundus();
    img.save_png(fixture("fundus16.png")).unwrap();
    green_filter(&img)
        .save_png(fixture("fundus16_green.png"))
        .unwrap();
    high_contrast(&img)
        .save_png(fixture("fundus16_high_contrast.png"))
        .unwrap();
    resize(&gradient4(), 224, 224)
        .save_png(fixture("gradient4_224.png"))
        .unwrap();
}
