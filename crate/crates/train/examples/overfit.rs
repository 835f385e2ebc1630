//! Overfits a tiny model on a synthetic 64-image set and prints each epoch.
//!
//! usage: overfit [densenet|resnet] [lr] [epochs] [dropout]

use fdl_core::model::Architecture;
use fdl_train::{train_on, LabeledImages, RunConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let architecture = match args.get(1).map(String::as_str) {
        Some("resnet") => Architecture::ResnetMini,
        _ => Architecture::DensenetMini,
    };
    let lr = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let epochs = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(200);
    let dropout = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let config = RunConfig {
        dropout,
        architecture,
        epochs,
        lr,
        image_size: 32,
        augment: false,
        ..RunConfig::default()
    };
    let train = LabeledImages::synthetic(64, 32, 100);
    let val = LabeledImages::synthetic(10, 32, 900);
    let start = std::time::Instant::now();
    let out = train_on(&config, &train, &val, |m| {
        println!(
            "{:>4} loss {:.4} acc {:.3} val {:.4} {:.3}  {:.1}s",
            m.epoch,
            m.train_loss,
            m.train_acc,
            m.val_loss,
            m.val_acc,
            start.elapsed().as_secs_f64()
        )
    });
    if let Err(e) = out {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}
