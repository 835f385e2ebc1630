//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fdl_core::loss::LossKind;
use fdl_core::model::{Architecture, Preset};
use fdl_data::{FilterKind, LabelEncoding};
use fdl_train::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "fdl",
    version,
    about = "Fundus image CNN toolkit: preprocessing, training and verification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Filter and resize every PNG under a directory into a mirrored tree.
    Prep(PrepArgs),
    /// Train one model and write its run directory.
    Train(TrainArgs),
    /// Train every architecture x filter combination on a shared split.
    Matrix(MatrixArgs),
    /// Evaluate a trained run's model on a labelled manifest.
    Eval(EvalArgs),
    /// Compare backward passes against central differences.
    Gradcheck(GradcheckArgs),
    /// Summarize finished runs from their metrics.csv files.
    Summary(SummaryArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ArchArg {
    #[value(name = "densenet-mini")]
    DensenetMini,
    #[value(name = "resnet-mini")]
    ResnetMini,
}

impl From<ArchArg> for Architecture {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::DensenetMini => Architecture::DensenetMini,
            ArchArg::ResnetMini => Architecture::ResnetMini,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum FilterArg {
    Rgb,
    Green,
    #[value(name = "hc", alias = "high_contrast", alias = "high-contrast")]
    HighContrast,
}

impl From<FilterArg> for FilterKind {
    fn from(f: FilterArg) -> Self {
        match f {
            FilterArg::Rgb => FilterKind::Rgb,
            FilterArg::Green => FilterKind::Green,
            FilterArg::HighContrast => FilterKind::HighContrast,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum LossArg {
    Bce,
    Cce,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum EncodingArg {
    Onehot,
    Ordinal,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum PresetArg {
    Tiny,
    Small,
}

#[derive(Args, Debug)]
pub struct PrepArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub filter: FilterArg,
    /// Output side length in pixels.
    #[arg(long, default_value_t = fdl_data::DEFAULT_SIZE)]
    pub size: usize,
}

/// Dataset location shared by the training-style subcommands.
#[derive(Args, Debug)]
pub struct DataArgs {
    /// Manifest with `id_code,diagnosis` columns.
    #[arg(long)]
    pub csv: PathBuf,
    /// Directory holding `<id_code>.png`.
    #[arg(long)]
    pub images: PathBuf,
}

/// Hyperparameters shared by `train` and `matrix`.
#[derive(Args, Debug)]
pub struct HyperArgs {
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Drawn at random, printed and recorded when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "bce")]
    pub loss: LossArg,
    #[arg(long, value_enum, default_value = "onehot")]
    pub label_encoding: EncodingArg,
    #[arg(long, value_enum, default_value = "tiny")]
    pub preset: PresetArg,
    /// Input side length in pixels.
    #[arg(long, default_value_t = fdl_data::DEFAULT_SIZE)]
    pub size: usize,
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    /// Keep class proportions equal across the split.
    #[arg(long)]
    pub stratify: bool,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    /// Disable random zoom and flips.
    #[arg(long)]
    pub no_augment: bool,
    /// Also save the model from the best validation epoch.
    #[arg(long)]
    pub save_best: bool,
}

impl HyperArgs {
    pub fn config(&self, architecture: Architecture, filter: FilterKind, seed: u64) -> RunConfig {
        RunConfig {
            architecture,
            filter,
            preset: match self.preset {
                PresetArg::Tiny => Preset::Tiny,
                PresetArg::Small => Preset::Small,
            },
            epochs: self.epochs,
            batch_size: self.batch,
            lr: self.lr,
            seed,
            loss: match self.loss {
                LossArg::Bce => LossKind::Bce,
                LossArg::Cce => LossKind::Cce,
            },
            label_encoding: match self.label_encoding {
                EncodingArg::Onehot => LabelEncoding::Onehot,
                EncodingArg::Ordinal => LabelEncoding::Ordinal,
            },
            image_size: self.size,
            val_fraction: self.val_fraction,
            stratify: self.stratify,
            augment: !self.no_augment,
            dropout: self.dropout,
            save_best: self.save_best,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub arch: ArchArg,
    #[arg(long, value_enum)]
    pub filter: FilterArg,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Run directory to create.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MatrixArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Root directory for the six run directories and summary.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Train cells concurrently; results are identical to a serial run.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Run directory produced by `train` or `matrix`.
    #[arg(long)]
    pub run: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Model file to load instead of the run's model.fdl.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Also write the result as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckPreset {
    #[value(name = "tiny-densenet")]
    TinyDensenet,
    #[value(name = "tiny-resnet")]
    TinyResnet,
    Ops,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, value_enum)]
    pub preset: CheckPreset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Double every analytic gradient; the check must then fail.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Args, Debug)]
pub struct SummaryArgs {
    /// Run directories, or matrix roots whose subdirectories are runs.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
}
