//! Runs driven by a [`RunConfig`]: dataset assembly, training, and evaluation.

use crate::config::RunConfig;
use crate::data::{load_dataset, synth_split, Sample, Split, SynthConfig};
use crate::error::Result;
use crate::metrics::{summarize, Averaging, Summary, DEFAULT_BETA_SQ};
use crate::model::DssNet;
use crate::nn::ParamStore;
use crate::optim::with_shadow;
use crate::supervision::{SupervisionConfig, SupervisionTargets};
use crate::tensor::Scalar;
use crate::train::{evaluate, predict, train, LogRow, TrainState};

#[derive(Clone, Debug)]
pub struct Datasets {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

/// Loads the configured directories, or synthesizes the missing splits.
pub fn datasets(cfg: &RunConfig) -> Result<Datasets> {
    let synth = |split, n| {
        synth_split(
            cfg.data_seed,
            split,
            n,
            cfg.image_size,
            cfg.synth_difficulty,
            &SynthConfig::default(),
        )
    };
    let train = match &cfg.train_dir {
        Some(dir) => load_dataset(dir, cfg.image_size)?,
        None => synth(Split::Train, cfg.synth_train)?,
    };
    let val = match &cfg.val_dir {
        Some(dir) => load_dataset(dir, cfg.image_size)?,
        None => synth(Split::Val, cfg.synth_val)?,
    };
    Ok(Datasets { train, val })
}

/// Model, final training state, and per-step log of one run.
pub struct Fitted<T> {
    pub net: DssNet,
    pub state: TrainState<T>,
    pub log: Vec<LogRow>,
}

impl<T: Scalar> Fitted<T> {
    pub fn eval_store(&self, use_ema: bool) -> Result<ParamStore<T>> {
        if use_ema {
            with_shadow(&self.state.store, &self.state.ema)
        } else {
            Ok(self.state.store.clone())
        }
    }
}

pub fn build<T: Scalar>(cfg: &RunConfig) -> Result<(DssNet, TrainState<T>)> {
    cfg.validate()?;
    let (net, store) = DssNet::new(cfg.model(), cfg.seed)?;
    Ok((net, TrainState::new(store.cast())))
}

pub fn fit<T: Scalar>(
    cfg: &RunConfig,
    samples: &[Sample],
    on_step: impl FnMut(&LogRow, &TrainState<T>) -> Result<()>,
) -> Result<Fitted<T>> {
    let (net, mut state) = build::<T>(cfg)?;
    let log = train(
        &net,
        &mut state,
        samples,
        &cfg.train(),
        &cfg.loss_weights(),
        &cfg.supervision(),
        on_step,
    )?;
    Ok(Fitted { net, state, log })
}

/// Micro-averaged maxF and mean MAE.
pub fn score<T: Scalar>(net: &DssNet, store: &ParamStore<T>, samples: &[Sample]) -> Result<Summary> {
    summarize(&evaluate(net, store, samples)?, DEFAULT_BETA_SQ, Averaging::Micro)
}

/// Mean coordination weight inside the boundary band and away from it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightSplit {
    /// Mean of `w` where `R* > 0.5`, averaged over images.
    pub band: f64,
    /// Mean of `w` where `R* = 0`, averaged over images.
    pub interior: f64,
    /// Images that contributed to both means.
    pub images: usize,
}

/// Per-image band and interior means of the coordination weight, averaged over `samples`.
/// `None` when the variant has no spatial weight map or no image has both regions.
pub fn weight_split<T: Scalar>(
    net: &DssNet,
    store: &ParamStore<T>,
    samples: &[Sample],
    sup: &SupervisionConfig,
) -> Result<Option<WeightSplit>> {
    let (mut band, mut interior, mut images) = (0.0, 0.0, 0usize);
    for sample in samples {
        let p = predict(net, store, &[&sample.image])?.remove(0);
        let Some(w) = p.weight_map else {
            return Ok(None);
        };
        let (_, _, h, wd) = w.dims4()?;
        let r_star = SupervisionTargets::new(sample.mask.cast::<f64>(), h, wd, sup)?.r_star;
        let (mut hi, mut nh, mut lo, mut nl) = (0.0, 0usize, 0.0, 0usize);
        for (&wv, &r) in w.data().iter().zip(r_star.data()) {
            if r > 0.5 {
                hi += wv as f64;
                nh += 1;
            } else if r == 0.0 {
                lo += wv as f64;
                nl += 1;
            }
        }
        if nh > 0 && nl > 0 {
            band += hi / nh as f64;
            interior += lo / nl as f64;
            images += 1;
        }
    }
    Ok((images > 0).then(|| WeightSplit {
        band: band / images as f64,
        interior: interior / images as f64,
        images,
    }))
}
