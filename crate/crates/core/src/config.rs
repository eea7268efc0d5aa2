//! Flat, typed run configuration stored as TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Difficulty, DESK_SIZE};
use crate::error::{Error, Result};
use crate::model::{BranchMode, CoordinationMode, DecoderMode, ModelConfig};
use crate::optim::AdamWConfig;
use crate::supervision::{LossWeights, StructureLossKind, SupervisionConfig};
use crate::tensor::Precision;
use crate::train::TrainConfig;

/// Every knob of a run. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub out_dir: PathBuf,

    /// Dataset directories; when unset, synthetic scenes are generated in memory.
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub image_size: usize,
    pub synth_train: usize,
    pub synth_val: usize,
    pub synth_difficulty: Difficulty,
    pub data_seed: u64,

    pub stem_channels: usize,
    pub encoder_channels: [usize; 4],
    pub unified_channels: usize,
    pub laplacian: bool,
    pub rc_kernels: [usize; 2],
    pub scm_hidden: usize,
    pub refine_reduced: usize,
    pub refine_hidden: usize,
    pub branches: BranchMode,
    pub coordination: CoordinationMode,
    pub decoder: DecoderMode,

    pub lambda_f: f64,
    pub lambda_c: f64,
    pub lambda_s: f64,
    pub lambda_bs: f64,
    pub lambda_scm: f64,
    pub structure_loss: StructureLossKind,
    pub weight_amplitude: f64,
    pub weight_kernel: usize,
    pub dilation_kernel: usize,
    pub smoothing_kernel: usize,
    pub dice_eps: f64,

    pub steps: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub ema_decay: f64,
    /// Evaluate and infer with the EMA shadows instead of the raw parameters.
    pub use_ema: bool,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let weights = LossWeights::default();
        let sup = SupervisionConfig::default();
        let train = TrainConfig::default();
        Self {
            seed: 7,
            precision: Precision::F32,
            out_dir: PathBuf::from("runs/default"),
            train_dir: None,
            val_dir: None,
            image_size: DESK_SIZE,
            synth_train: 64,
            synth_val: 16,
            synth_difficulty: Difficulty::Easy,
            data_seed: 7,
            stem_channels: model.stem_channels,
            encoder_channels: model.encoder_channels,
            unified_channels: model.unified_channels,
            laplacian: model.laplacian,
            rc_kernels: model.rc_kernels,
            scm_hidden: model.scm_hidden,
            refine_reduced: model.refine_reduced,
            refine_hidden: model.refine_hidden,
            branches: model.branches,
            coordination: model.coordination,
            decoder: model.decoder,
            lambda_f: weights.final_w,
            lambda_c: weights.coarse,
            lambda_s: weights.low,
            lambda_bs: weights.boundary,
            lambda_scm: weights.coordination,
            structure_loss: sup.structure,
            weight_amplitude: sup.weight_amplitude,
            weight_kernel: sup.weight_kernel,
            dilation_kernel: sup.dilation_kernel,
            smoothing_kernel: sup.smoothing_kernel,
            dice_eps: sup.dice_eps,
            steps: train.steps,
            batch_size: train.batch_size,
            lr_max: train.lr_max,
            lr_min: train.lr_min,
            weight_decay: train.adamw.weight_decay,
            beta1: train.adamw.beta1,
            beta2: train.adamw.beta2,
            adam_eps: train.adamw.eps,
            clip_norm: train.clip_norm,
            ema_decay: train.ema_decay,
            use_ema: false,
            checkpoint_every: 0,
        }
    }
}

impl RunConfig {
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            stem_channels: self.stem_channels,
            encoder_channels: self.encoder_channels,
            unified_channels: self.unified_channels,
            laplacian: self.laplacian,
            rc_kernels: self.rc_kernels,
            scm_hidden: self.scm_hidden,
            refine_reduced: self.refine_reduced,
            refine_hidden: self.refine_hidden,
            branches: self.branches,
            coordination: self.coordination,
            decoder: self.decoder,
        }
    }

    pub fn set_model(&mut self, m: &ModelConfig) {
        self.stem_channels = m.stem_channels;
        self.encoder_channels = m.encoder_channels;
        self.unified_channels = m.unified_channels;
        self.laplacian = m.laplacian;
        self.rc_kernels = m.rc_kernels;
        self.scm_hidden = m.scm_hidden;
        self.refine_reduced = m.refine_reduced;
        self.refine_hidden = m.refine_hidden;
        self.branches = m.branches;
        self.coordination = m.coordination;
        self.decoder = m.decoder;
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            final_w: self.lambda_f,
            coarse: self.lambda_c,
            low: self.lambda_s,
            boundary: self.lambda_bs,
            coordination: self.lambda_scm,
        }
    }

    pub fn supervision(&self) -> SupervisionConfig {
        SupervisionConfig {
            structure: self.structure_loss,
            weight_amplitude: self.weight_amplitude,
            weight_kernel: self.weight_kernel,
            dilation_kernel: self.dilation_kernel,
            smoothing_kernel: self.smoothing_kernel,
            dice_eps: self.dice_eps,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            lr_max: self.lr_max,
            lr_min: self.lr_min,
            adamw: AdamWConfig {
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
                weight_decay: self.weight_decay,
            },
            clip_norm: self.clip_norm,
            ema_decay: self.ema_decay,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.loss_weights().validate()?;
        self.supervision().validate()?;
        self.train().validate()?;
        crate::model::check_input_extents(self.image_size, self.image_size)?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("serializing config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("parsing config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes to JSON")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        serde_json::from_value(value.clone()).map_err(|e| Error::config(format!("embedded config: {e}")))
    }

    fn table(&self) -> Result<toml::Table> {
        toml::Table::try_from(self).map_err(|e| Error::config(format!("serializing config: {e}")))
    }

    /// Sets one key from a TOML value literal (`steps=10`, `branches="region"`). Bare words
    /// that do not parse as TOML are treated as strings.
    pub fn set(&mut self, key: &str, literal: &str) -> Result<()> {
        let wrapped = format!("v = {literal}");
        let value = match wrapped.parse::<toml::Table>() {
            Ok(mut t) => t.remove("v").expect("key present"),
            Err(_) => toml::Value::String(literal.to_string()),
        };
        self.set_value(key, value)
    }

    pub fn set_value(&mut self, key: &str, value: toml::Value) -> Result<()> {
        let mut table = self.table()?;
        if !table.contains_key(key) && !Self::optional_keys().contains(&key) {
            return Err(Error::config(format!("unknown config key `{key}`")));
        }
        table.insert(key.to_string(), value);
        *self = table
            .try_into()
            .map_err(|e| Error::config(format!("invalid value for `{key}`: {e}")))?;
        Ok(())
    }

    /// Keys that may be absent from the serialized form because they default to none.
    fn optional_keys() -> &'static [&'static str] {
        &["train_dir", "val_dir"]
    }

    /// Keys whose values differ between `self` and `other`.
    pub fn diff(&self, other: &RunConfig) -> Result<Vec<String>> {
        let a = self.table()?;
        let b = other.table()?;
        let mut keys: Vec<String> = a
            .keys()
            .chain(b.keys())
            .filter(|k| a.get(*k) != b.get(*k))
            .cloned()
            .collect();
        keys.sort();
        keys.dedup();
        Ok(keys)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_keeps_defaults() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let w = back.loss_weights();
        assert_eq!((w.final_w, w.coarse, w.low), (4.0, 0.25, 0.25));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("stepz = 3"), Err(Error::Config(_))));
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.set("stepz", "3"), Err(Error::Config(_))));
    }

    #[test]
    fn set_parses_typed_values() {
        let mut cfg = RunConfig::default();
        cfg.set("steps", "12").unwrap();
        cfg.set("branches", "region").unwrap();
        cfg.set("rc_kernels", "[5, 9]").unwrap();
        cfg.set("train_dir", "data/train").unwrap();
        assert_eq!(cfg.steps, 12);
        assert_eq!(cfg.branches, BranchMode::Region);
        assert_eq!(cfg.rc_kernels, [5, 9]);
        assert_eq!(cfg.train_dir.as_deref(), Some(Path::new("data/train")));
        assert!(cfg.set("steps", "\"many\"").is_err());
        assert_eq!(cfg.diff(&RunConfig::default()).unwrap(), vec!["branches", "rc_kernels", "steps", "train_dir"]);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_toml("steps = 5\nlambda_bs = 0.5\n").unwrap();
        assert_eq!(cfg.steps, 5);
        assert_eq!(cfg.lambda_bs, 0.5);
        assert_eq!(cfg.lambda_f, 4.0);
    }
}
