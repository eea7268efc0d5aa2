//! AdamW with decoupled weight decay, cosine learning-rate annealing, global-norm clipping, and
//! an exponential moving average of the parameters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// Moment estimates and step count. Moments are created lazily with the parameter's shape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

/// One AdamW update of every parameter in `store`. Each parameter must have a finite gradient.
pub fn adamw_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::config(format!("learning rate must be positive, got {lr}")));
    }
    for (name, p) in store.params() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Usage(format!("no gradient for parameter `{name}`")))?;
        if g.shape() != p.shape() {
            return Err(Error::Usage(format!(
                "gradient shape {:?} does not match parameter `{name}` {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if let Some(i) = g.first_non_finite() {
            return Err(Error::numeric(
                "adamw_step",
                format!("non-finite gradient for `{name}` at flat index {i}"),
            ));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let c1 = T::from_f64(1.0 - cfg.beta1.powi(t));
    let c2 = T::from_f64(1.0 - cfg.beta2.powi(t));
    let lr_t = T::from_f64(lr);
    let decay = T::from_f64(1.0 - lr * cfg.weight_decay);
    let eps = T::from_f64(cfg.eps);

    for (name, p) in store.params_mut() {
        let g = &grads[name];
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + one_b1 * gi;
            *vi = b2 * *vi + one_b2 * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi = *pi * decay - lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// `lr_min + (lr_max - lr_min) (1 + cos(pi step / total)) / 2`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::config("cosine schedule needs at least one step"));
    }
    if step > total_steps {
        return Err(Error::config(format!("step {step} beyond schedule length {total_steps}")));
    }
    if step == 0 {
        return Ok(lr_max);
    }
    if step == total_steps {
        return Ok(lr_min);
    }
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + phase.cos()))
}

pub fn global_norm<T: Scalar>(grads: &BTreeMap<String, Tensor<T>>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|&v| {
            let v = v.to_f64();
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`. Returns the norm before
/// clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut BTreeMap<String, Tensor<T>>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = T::from_f64(max_norm / norm);
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

/// `shadow <- decay * shadow + (1 - decay) * params` for every parameter.
pub fn ema_update<T: Scalar>(shadow: &mut BTreeMap<String, Tensor<T>>, store: &ParamStore<T>, decay: f64) -> Result<()> {
    let d = T::from_f64(decay);
    let rest = T::from_f64(1.0 - decay);
    for (name, p) in store.params() {
        let s = shadow
            .get_mut(name)
            .ok_or_else(|| Error::Usage(format!("no EMA shadow for `{name}`")))?;
        for (si, &pi) in s.data_mut().iter_mut().zip(p.data()) {
            *si = d * *si + rest * pi;
        }
    }
    Ok(())
}

/// Shadows initialized to the current parameters.
pub fn ema_init<T: Scalar>(store: &ParamStore<T>) -> BTreeMap<String, Tensor<T>> {
    store.params().map(|(k, v)| (k.clone(), v.clone())).collect()
}

/// Copy of `store` with parameters replaced by the EMA shadows (buffers are kept).
pub fn with_shadow<T: Scalar>(store: &ParamStore<T>, shadow: &BTreeMap<String, Tensor<T>>) -> Result<ParamStore<T>> {
    let mut out = store.clone();
    for (name, p) in out.params_mut() {
        let s = shadow
            .get(name)
            .ok_or_else(|| Error::Usage(format!("no EMA shadow for `{name}`")))?;
        *p = s.clone();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::from_vec(vec![1], vec![v]).unwrap());
        s
    }

    fn grads(v: f64) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([("p".to_string(), Tensor::from_vec(vec![1], vec![v]).unwrap())])
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 100, 1e-4, 1e-6).unwrap(), 1e-4);
        assert_eq!(cosine_lr(100, 100, 1e-4, 1e-6).unwrap(), 1e-6);
        assert!((cosine_lr(50, 100, 1e-4, 1e-6).unwrap() - 5.05e-5).abs() < 1e-18);
        assert!(matches!(cosine_lr(0, 0, 1e-4, 1e-6), Err(Error::Config(_))));
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut store = scalar_store(0.7);
        let mut st = AdamState::new();
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        for _ in 0..3 {
            adamw_step(&mut store, &grads(0.0), &mut st, 1e-3, &cfg).unwrap();
        }
        assert_eq!(store.get("p").unwrap().item(), 0.7);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut store = scalar_store(0.0);
        let err = adamw_step(&mut store, &grads(f64::NAN), &mut AdamState::new(), 1e-3, &AdamWConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("`p`"));
        assert_eq!(store.get("p").unwrap().item(), 0.0);
    }

    #[test]
    fn clipping_scales_to_max_norm() {
        let mut g = BTreeMap::from([
            ("a".to_string(), Tensor::from_vec(vec![1], vec![3.0]).unwrap()),
            ("b".to_string(), Tensor::from_vec(vec![1], vec![4.0]).unwrap()),
        ]);
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g["a"].item() - 0.6).abs() < 1e-15);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
        let mut small = BTreeMap::from([("a".to_string(), Tensor::from_vec(vec![1], vec![0.5]).unwrap())]);
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small["a"].item(), 0.5);
    }

    #[test]
    fn ema_three_steps() {
        let store = scalar_store(1.0);
        let mut shadow = BTreeMap::from([("p".to_string(), Tensor::from_vec(vec![1], vec![0.0]).unwrap())]);
        for _ in 0..3 {
            ema_update(&mut shadow, &store, 0.999).unwrap();
        }
        assert!((shadow["p"].item() - (1.0 - 0.999f64.powi(3))).abs() < 1e-12);
    }
}
