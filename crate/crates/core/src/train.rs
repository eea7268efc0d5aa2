//! Training loop and batched inference.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batch, Sample};
use crate::error::{Error, Result};
use crate::metrics::EvalRecord;
use crate::model::DssNet;
use crate::nn::{apply_bn_updates, ParamStore, Session};
use crate::optim::{adamw_step, clip_global_norm, cosine_lr, ema_init, ema_update, AdamState, AdamWConfig};
use crate::supervision::{total_loss, LossValues, LossWeights, SupervisionConfig, SupervisionTargets};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub adamw: AdamWConfig,
    pub clip_norm: f64,
    pub ema_decay: f64,
    /// Seed of the sample order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 4,
            lr_max: 1e-4,
            lr_min: 1e-6,
            adamw: AdamWConfig::default(),
            clip_norm: 1.0,
            ema_decay: 0.999,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.lr_max > 0.0 && self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::config(format!(
                "learning rates must satisfy 0 < lr_min <= lr_max, got {} and {}",
                self.lr_min, self.lr_max
            )));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::config("clip_norm must be positive"));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::config("ema_decay must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// One row of the per-step loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub losses: LossValues,
}

pub const LOG_HEADER: [&str; 6] = ["step", "lr", "l_total", "l_seg", "l_bs", "l_scm"];

pub fn write_log_csv<W: Write>(out: W, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| Error::validation(format!("writing loss log: {e}"));
    w.write_record(LOG_HEADER).map_err(to_err)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            format!("{:e}", r.lr),
            r.losses.total.to_string(),
            r.losses.seg.to_string(),
            r.losses.boundary.to_string(),
            r.losses.coordination.to_string(),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io("loss log", e))?;
    Ok(())
}

pub fn save_log_csv(path: &Path, rows: &[LogRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_log_csv(std::io::BufWriter::new(file), rows)
}

/// Mean total loss over the first and the last `window` steps.
pub fn smoothed_endpoints(rows: &[LogRow], window: usize) -> Option<(f64, f64)> {
    if rows.is_empty() || window == 0 {
        return None;
    }
    let k = window.min(rows.len());
    let mean = |rs: &[LogRow]| rs.iter().map(|r| r.losses.total).sum::<f64>() / rs.len() as f64;
    Some((mean(&rows[..k]), mean(&rows[rows.len() - k..])))
}

/// Everything that changes during training.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub store: ParamStore<T>,
    pub adam: AdamState<T>,
    pub ema: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(store: ParamStore<T>) -> Self {
        let ema = ema_init(&store);
        Self {
            store,
            adam: AdamState::new(),
            ema,
        }
    }
}

/// Deterministic sample order: consecutive shuffled epochs, cut into batches.
pub fn batch_order(n: usize, batch_size: usize, steps: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n < batch_size {
        return Err(Error::config(format!("dataset of {n} samples is smaller than batch size {batch_size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stream = Vec::with_capacity(steps * batch_size + n);
    while stream.len() < steps * batch_size {
        let mut epoch: Vec<usize> = (0..n).collect();
        epoch.shuffle(&mut rng);
        stream.extend(epoch);
    }
    Ok(stream.chunks(batch_size).take(steps).map(<[usize]>::to_vec).collect())
}

/// Forward, loss, and gradients for one batch, without touching the parameters.
pub struct StepResult<T> {
    pub losses: LossValues,
    pub grads: BTreeMap<String, Tensor<T>>,
    pub bn_updates: Vec<(String, Vec<T>, Vec<T>)>,
}

pub fn compute_step<T: Scalar>(
    net: &DssNet,
    store: &ParamStore<T>,
    image: &Tensor<T>,
    mask: &Tensor<T>,
    weights: &LossWeights,
    sup: &SupervisionConfig,
) -> Result<StepResult<T>> {
    let mut s = Session::new(store, true);
    let x = s.input(image.clone());
    let f = net.forward(&mut s, x)?;
    let (_, _, h, w) = s.graph.value(f.base).dims4()?;
    let targets = SupervisionTargets::new(mask.clone(), h, w, sup)?;
    let loss = total_loss(&mut s.graph, &f, &targets, weights, sup)?;
    s.graph.backward(loss.total)?;
    let losses = loss.values(&s.graph);
    let grads = s.param_grads();
    let bn_updates = s.take_bn_updates();
    Ok(StepResult {
        losses,
        grads,
        bn_updates,
    })
}

fn annotate(err: Error, step: usize, ids: &[&str]) -> Error {
    match err {
        Error::Numeric { op, detail } => Error::Numeric {
            op,
            detail: format!("step {step}, samples [{}]: {detail}", ids.join(", ")),
        },
        other => other,
    }
}

/// Runs `cfg.steps` optimizer steps. `on_step` sees each completed step and the updated state.
#[allow(clippy::too_many_arguments)]
pub fn train<T: Scalar>(
    net: &DssNet,
    state: &mut TrainState<T>,
    samples: &[Sample],
    cfg: &TrainConfig,
    weights: &LossWeights,
    sup: &SupervisionConfig,
    mut on_step: impl FnMut(&LogRow, &TrainState<T>) -> Result<()>,
) -> Result<Vec<LogRow>> {
    cfg.validate()?;
    weights.validate()?;
    sup.validate()?;
    if cfg.steps == 0 {
        return Ok(Vec::new());
    }
    let order = batch_order(samples.len(), cfg.batch_size, cfg.steps, cfg.seed)?;
    let mut log = Vec::with_capacity(cfg.steps);
    for (step, idx) in order.iter().enumerate() {
        let chosen: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
        let ids: Vec<&str> = chosen.iter().map(|s| s.id.as_str()).collect();
        let (image, mask) = batch(&chosen)?;
        let lr = cosine_lr(step, cfg.steps, cfg.lr_max, cfg.lr_min)?;
        let mut run = || -> Result<LossValues> {
            let mut r = compute_step(net, &state.store, &image.cast(), &mask.cast(), weights, sup)?;
            if !r.losses.total.is_finite() {
                return Err(Error::numeric("total_loss", "non-finite loss"));
            }
            clip_global_norm(&mut r.grads, cfg.clip_norm);
            adamw_step(&mut state.store, &r.grads, &mut state.adam, lr, &cfg.adamw)?;
            apply_bn_updates(&mut state.store, &r.bn_updates)?;
            ema_update(&mut state.ema, &state.store, cfg.ema_decay)?;
            Ok(r.losses)
        };
        let losses = run().map_err(|e| annotate(e, step, &ids))?;
        let row = LogRow { step, lr, losses };
        on_step(&row, state)?;
        log.push(row);
    }
    Ok(log)
}

/// Diagnostic maps of one image.
#[derive(Clone, Debug)]
pub struct Prediction {
    /// `[1, 1, H, W]` saliency probabilities.
    pub saliency: Tensor<f32>,
    /// `[1, 1, h, w]` boundary probabilities, when the variant has a boundary branch.
    pub boundary: Option<Tensor<f32>>,
    /// `[1, 1, h, w]` coordination weights, when the variant produces them.
    pub weight_map: Option<Tensor<f32>>,
}

/// Evaluation-mode forward of each image in turn.
pub fn predict<T: Scalar>(net: &DssNet, store: &ParamStore<T>, images: &[&Tensor<f32>]) -> Result<Vec<Prediction>> {
    images
        .iter()
        .map(|img| {
            let mut s = Session::new(store, false);
            let x = s.input(img.cast());
            let f = net.forward(&mut s, x)?;
            let get = |v| s.graph.value(v).cast::<f32>();
            Ok(Prediction {
                saliency: get(f.saliency),
                boundary: f.boundary.map(|b| get(b.prob)),
                weight_map: f.weight_map().map(get),
            })
        })
        .collect()
}

/// Per-image metric records of `samples` under evaluation mode.
pub fn evaluate<T: Scalar>(net: &DssNet, store: &ParamStore<T>, samples: &[Sample]) -> Result<Vec<EvalRecord>> {
    samples
        .iter()
        .map(|sample| {
            let p = predict(net, store, &[&sample.image])?.remove(0);
            EvalRecord::new(&p.saliency, &sample.mask)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_order_covers_each_epoch_once() {
        let order = batch_order(8, 4, 4, 3).unwrap();
        let mut first: Vec<usize> = order[..2].concat();
        first.sort();
        assert_eq!(first, (0..8).collect::<Vec<_>>());
        assert_eq!(order, batch_order(8, 4, 4, 3).unwrap());
        assert_ne!(order, batch_order(8, 4, 4, 4).unwrap());
    }

    #[test]
    fn too_few_samples_for_a_batch() {
        assert!(matches!(batch_order(3, 4, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn log_csv_header() {
        let mut buf = Vec::new();
        write_log_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), "step,lr,l_total,l_seg,l_bs,l_scm");
    }
}
