//! Run configuration and the fixed constants echoed alongside it.

use fdl_core::adam::AdamConfig;
use fdl_core::loss::LossKind;
use fdl_core::model::{Architecture, ModelSpec, Preset};
use fdl_data::{FilterKind, LabelEncoding};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One experiment cell. Every field is written to `config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub architecture: Architecture,
    pub filter: FilterKind,
    pub preset: Preset,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub label_encoding: LabelEncoding,
    pub image_size: usize,
    pub val_fraction: f64,
    pub stratify: bool,
    /// Random zoom and flips on training batches.
    pub augment: bool,
    pub dropout: f64,
    /// Also serialize the model from the best validation epoch.
    pub save_best: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            architecture: Architecture::DensenetMini,
            filter: FilterKind::Rgb,
            preset: Preset::Tiny,
            epochs: 15,
            batch_size: 32,
            lr: 1e-4,
            seed: 0,
            loss: LossKind::Bce,
            label_encoding: LabelEncoding::Onehot,
            image_size: fdl_data::DEFAULT_SIZE,
            val_fraction: 0.2,
            stratify: false,
            augment: true,
            dropout: 0.5,
            save_best: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail("learning rate must be positive and finite");
        }
        if self.image_size == 0 {
            return fail("image size must be at least 1");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return fail("validation fraction must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout rate must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        let mut spec = ModelSpec::preset(
            self.architecture,
            self.preset,
            self.image_size,
            self.image_size,
        );
        spec.dropout = self.dropout;
        spec
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.lr)
    }

    /// Directory name used for this cell inside a matrix run.
    pub fn cell_name(&self) -> String {
        format!("{}_{}", self.architecture, self.filter)
    }
}

/// Seeds for each random subsystem, derived from the run seed by fixed
/// offsets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    pub split: u64,
    pub init: u64,
    pub shuffle: u64,
    pub augment: u64,
    pub dropout: u64,
}

impl Seeds {
    pub fn from_run_seed(seed: u64) -> Self {
        Seeds {
            split: seed,
            init: seed.wrapping_add(1),
            shuffle: seed.wrapping_add(2),
            augment: seed.wrapping_add(3),
            dropout: seed.wrapping_add(4),
        }
    }
}

/// Constants that are not configurable but shape the results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedConstants {
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batchnorm_momentum: f64,
    pub batchnorm_eps: f64,
    pub prediction_clip: f64,
    pub zoom_range: (f64, f64),
    pub flip_probability: f64,
    pub summary_rule: String,
}

impl Default for FixedConstants {
    fn default() -> Self {
        let adam = AdamConfig::default();
        FixedConstants {
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            batchnorm_momentum: fdl_core::nn::BATCHNORM_MOMENTUM,
            batchnorm_eps: fdl_core::nn::BATCHNORM_EPS,
            prediction_clip: fdl_core::loss::CLIP,
            zoom_range: (fdl_data::augment::ZOOM_MIN, fdl_data::augment::ZOOM_MAX),
            flip_probability: fdl_data::augment::FLIP_PROBABILITY,
            summary_rule: crate::metrics::SUMMARY_RULE.to_string(),
        }
    }
}

/// Contents of `config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub constants: FixedConstants,
}

impl RunRecord {
    pub fn new(config: RunConfig) -> Self {
        RunRecord {
            config,
            constants: FixedConstants::default(),
        }
    }
}
