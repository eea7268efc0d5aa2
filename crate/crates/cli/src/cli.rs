//! Argument definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dss_core::ablation::Family;
use dss_core::data::{Difficulty, Split};
use dss_core::metrics::{Averaging, DEFAULT_BETA_SQ};
use dss_core::{Error, Result, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "dss", version, about = "Boundary/region structural specialization for salient object detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Materialize a synthetic dataset as images/ and masks/ PNG pairs plus a manifest.
    Synth(SynthArgs),
    /// Train a model and write its loss log, checkpoints, and validation metrics.
    Train(TrainArgs),
    /// Write saliency, boundary, and coordination-weight maps for images.
    Infer(InferArgs),
    /// Score a checkpoint on a dataset, or score saved predictions against masks.
    Eval(EvalArgs),
    /// Train and score every variant of an ablation family.
    Ablate(AblateArgs),
    /// Run gradient checks, operator oracles, and exact identities.
    Selfcheck(SelfcheckArgs),
}

/// Run configuration: an optional TOML file, then `--set` overrides in order.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML run configuration; defaults are used for absent keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key with a TOML literal, e.g. `--set steps=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for pair in &self.set {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::config(format!("`--set {pair}` is not of the form KEY=VALUE")))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }
}

/// Which parameters to evaluate with.
#[derive(Debug, Args)]
pub struct WeightsArgs {
    /// Use the EMA shadow parameters.
    #[arg(long, conflicts_with = "raw")]
    pub ema: bool,
    /// Use the raw trained parameters.
    #[arg(long)]
    pub raw: bool,
}

impl WeightsArgs {
    /// The explicit flag, or the checkpoint's configured default.
    pub fn use_ema(&self, configured: bool) -> bool {
        if self.ema {
            true
        } else if self.raw {
            false
        } else {
            configured
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AveragingArg {
    Micro,
    Macro,
}

impl From<AveragingArg> for Averaging {
    fn from(a: AveragingArg) -> Self {
        match a {
            AveragingArg::Micro => Averaging::Micro,
            AveragingArg::Macro => Averaging::Macro,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Dataset root; receives images/, masks/, and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    /// Side length in pixels; must be a multiple of 32.
    #[arg(long, default_value_t = 96)]
    pub size: usize,
    /// `easy` or `hard`.
    #[arg(long, default_value = "easy")]
    pub difficulty: Difficulty,
    /// Dataset seed; per-scene seeds derive from it and the split.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,
    /// Fix the blur strength instead of sampling it.
    #[arg(long)]
    pub blur_sigma: Option<f64>,
    /// Fix the sensor noise strength instead of sampling it.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Overwrite an existing dataset manifest.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite an existing run in the output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub weights: WeightsArgs,
    /// Input PNG images.
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to score; pairs with `--data`, or the configured validation set.
    #[arg(long, conflicts_with_all = ["pred", "gt"], required_unless_present = "pred")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset root with images/ and masks/.
    #[arg(long, requires = "checkpoint")]
    pub data: Option<PathBuf>,
    /// Directory of saved saliency PNGs (`{stem}.png` or `{stem}_saliency.png`).
    #[arg(long, requires = "gt")]
    pub pred: Option<PathBuf>,
    /// Directory of ground-truth masks, or a dataset root containing masks/.
    #[arg(long, requires = "pred")]
    pub gt: Option<PathBuf>,
    #[command(flatten)]
    pub weights: WeightsArgs,
    #[arg(long, default_value_t = DEFAULT_BETA_SQ)]
    pub beta_sq: f64,
    #[arg(long, value_enum, default_value_t = AveragingArg::Micro)]
    pub averaging: AveragingArg,
    /// Receives pr_curve.csv, summary.csv, and provenance.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// `branches`, `coordination`, `supervision`, or `decoder`.
    #[arg(long)]
    pub family: Family,
    /// Report CSV; a provenance JSON is written beside it.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Overwrite an existing report.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SelfcheckArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Skip the whole-model gradient checks.
    #[arg(long)]
    pub skip_model: bool,
    /// Perturb the center tap of the Laplacian stencil used by the identity checks.
    #[arg(long, hide = true)]
    pub corrupt_laplacian: bool,
}
