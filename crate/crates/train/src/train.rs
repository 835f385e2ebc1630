//! Mini-batch training with Adam and per-epoch validation.

use fdl_core::adam::AdamState;
use fdl_core::model::{ModelGraph, Phase};
use fdl_core::{loss, Shape4, Tensor4};
use fdl_data::{augment, LabelEncoding};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{RunConfig, Seeds};
use crate::error::{Error, Result};
use crate::metrics::{EpochMetrics, MetricsLog};

pub type Model = ModelGraph<f64>;

/// Images of shape (1, 3, s, s) with their grade labels.
#[derive(Clone, Debug, Default)]
pub struct LabeledImages {
    pub images: Vec<Tensor4<f64>>,
    pub labels: Vec<usize>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// `n` synthetic fundus images cycling through the grades, at side `size`.
    pub fn synthetic(n: usize, size: usize, seed: u64) -> Self {
        let labels: Vec<usize> = (0..n).map(|i| i % fdl_data::NUM_CLASSES).collect();
        let images = labels
            .par_iter()
            .enumerate()
            .map(|(i, &g)| {
                fdl_data::synthetic::fundus(size, g, seed.wrapping_add(i as u64)).to_tensor()
            })
            .collect();
        LabeledImages { images, labels }
    }

    fn check(&self, what: &str, size: usize) -> Result<()> {
        if self.images.len() != self.labels.len() {
            return Err(Error::Config(format!(
                "{what}: {} images but {} labels",
                self.images.len(),
                self.labels.len()
            )));
        }
        let want = Shape4::new(1, 3, size, size);
        if let Some((i, img)) = self
            .images
            .iter()
            .enumerate()
            .find(|(_, t)| t.shape() != want)
        {
            return Err(Error::Config(format!(
                "{what}: image {i} has shape {}, expected {want}",
                img.shape()
            )));
        }
        Ok(())
    }

    fn batch(&self, idx: &[usize]) -> Result<Tensor4<f64>> {
        let parts: Vec<&Tensor4<f64>> = idx.iter().map(|&i| &self.images[i]).collect();
        Ok(Tensor4::stack(&parts)?)
    }
}

pub struct TrainOutcome {
    pub log: MetricsLog,
    pub model: Model,
    /// Snapshot from the best validation epoch, when requested.
    pub best_model: Option<Model>,
}

/// Number of optimizer steps per epoch; the last batch may be short.
pub fn steps_per_epoch(n_train: usize, batch_size: usize) -> usize {
    n_train.div_ceil(batch_size)
}

/// A fresh seeded permutation of `0..n`, cut into batches.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn encode_all(encoding: LabelEncoding, labels: &[usize]) -> Result<Vec<Vec<f64>>> {
    Ok(labels
        .iter()
        .map(|&l| encoding.encode(l))
        .collect::<fdl_data::Result<_>>()?)
}

fn count_correct(encoding: LabelEncoding, labels: &[usize], preds: &Tensor4<f64>) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| encoding.decode(preds.sample(i)) == l)
        .count()
}

/// Inference-mode loss and accuracy over `data`, evaluated in chunks.
/// Parameters and running statistics are not touched.
pub fn evaluate(model: &Model, data: &LabeledImages, config: &RunConfig) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Config("cannot evaluate an empty dataset".into()));
    }
    let targets = encode_all(config.label_encoding, &data.labels)?;
    let (mut loss_sum, mut correct) = (0.0, 0);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(config.batch_size.max(1)) {
        let preds = model.predict(&data.batch(chunk)?)?;
        let t: Vec<Vec<f64>> = chunk.iter().map(|&i| targets[i].clone()).collect();
        let (l, _) = loss::batch_loss(config.loss, &t, &preds)?;
        loss_sum += l * chunk.len() as f64;
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        correct += count_correct(config.label_encoding, &labels, &preds);
    }
    let n = data.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

/// Trains a freshly initialised model. `on_epoch` sees each metrics row as
/// soon as it is complete.
pub fn train_on(
    config: &RunConfig,
    train: &LabeledImages,
    val: &LabeledImages,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config(
            "no training samples: zero training steps per epoch".into(),
        ));
    }
    if val.is_empty() {
        return Err(Error::Config("validation subset is empty".into()));
    }
    train.check("training set", config.image_size)?;
    val.check("validation set", config.image_size)?;

    let seeds = Seeds::from_run_seed(config.seed);
    let mut model = Model::build(&config.model_spec())?;
    model.init_params(&mut ChaCha8Rng::seed_from_u64(seeds.init));
    let mut adam = AdamState::new(config.adam(), model.param_lengths());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seeds.shuffle);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seeds.dropout);
    let targets = encode_all(config.label_encoding, &train.labels)?;
    let n = train.len();

    let mut log = MetricsLog::default();
    let mut best_model = None;
    let mut best_acc = f64::NEG_INFINITY;
    for epoch in 1..=config.epochs {
        let (mut loss_sum, mut correct) = (0.0, 0);
        for (step, idx) in epoch_batches(n, config.batch_size, &mut shuffle_rng)
            .into_iter()
            .enumerate()
        {
            let step = step + 1;
            let diverged = |message: String| Error::Diverged {
                epoch,
                step,
                message,
            };
            let x = if config.augment {
                // one independent stream per (epoch, sample) keeps parallel assembly deterministic
                let parts: Vec<Tensor4<f64>> = idx
                    .par_iter()
                    .map(|&i| {
                        let mut rng = ChaCha8Rng::seed_from_u64(seeds.augment);
                        rng.set_stream(((epoch - 1) * n + i) as u64);
                        augment(&train.images[i], &mut rng)
                    })
                    .collect();
                Tensor4::stack(&parts.iter().collect::<Vec<_>>())?
            } else {
                train.batch(&idx)?
            };
            let t: Vec<Vec<f64>> = idx.iter().map(|&i| targets[i].clone()).collect();
            let (l, preds) = model
                .forward_backward(&x, &t, config.loss, Phase::TRAIN, &mut dropout_rng)
                .map_err(|e| diverged(e.to_string()))?;
            if !l.is_finite() {
                return Err(diverged(format!("loss is {l}")));
            }
            model
                .apply_adam(&mut adam)
                .map_err(|e| diverged(e.to_string()))?;
            loss_sum += l * idx.len() as f64;
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            correct += count_correct(config.label_encoding, &labels, &preds);
        }
        let (val_loss, val_acc) = evaluate(&model, val, config)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step: steps_per_epoch(n, config.batch_size),
                message: format!("validation loss is {val_loss}"),
            });
        }
        let row = EpochMetrics {
            epoch,
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            val_loss,
            val_acc,
        };
        if config.save_best && val_acc > best_acc {
            best_acc = val_acc;
            best_model = Some(model.clone());
        }
        on_epoch(&row);
        log.push(row);
    }
    Ok(TrainOutcome {
        log,
        model,
        best_model,
    })
}
