//! Parameter storage, forward sessions, and the handful of layer types the model is built from.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::conv::ConvSpec;
use crate::kernels::norm::{default_groups, NormKind};
use crate::tensor::{Scalar, Tensor};

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Named trainable parameters plus non-trainable buffers (batch-norm running statistics).
///
/// Iteration order is the lexicographic order of names, which keeps every consumer (optimizer,
/// checkpoint writer, gradient clipping) deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Tensor<T>>,
    buffers: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.params.insert(name.into(), value);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.buffers.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor<T>> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown buffer `{name}`")))
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.buffers
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("unknown buffer `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.params.iter_mut()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.buffers.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    /// Total number of trainable scalars.
    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Number of trainable scalars whose name starts with `prefix`.
    pub fn num_params_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.len())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

/// Forward pass context: the graph being recorded plus read-only access to parameters.
pub struct Session<'s, T> {
    pub graph: Graph<T>,
    store: &'s ParamStore<T>,
    leaves: BTreeMap<String, Var>,
    train: bool,
    bn_updates: Vec<(String, Vec<T>, Vec<T>)>,
}

impl<'s, T: Scalar> Session<'s, T> {
    /// `train` selects batch statistics for batch norm and records running-stat updates.
    pub fn new(store: &'s ParamStore<T>, train: bool) -> Self {
        Self {
            graph: Graph::new(),
            store,
            leaves: BTreeMap::new(),
            train,
            bn_updates: Vec::new(),
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    /// Graph leaf for a named parameter, created on first use.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.leaves.get(name) {
            return Ok(v);
        }
        let value = self.store.get(name)?.clone();
        let v = self.graph.leaf(value, true);
        self.leaves.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.graph.constant(value)
    }

    /// Gradients of every parameter touched by the forward pass, after `graph.backward`.
    pub fn param_grads(&self) -> BTreeMap<String, Tensor<T>> {
        self.leaves
            .iter()
            .filter_map(|(name, &v)| self.graph.grad(v).map(|g| (name.clone(), g.clone())))
            .collect()
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.leaves.get(name).copied()
    }

    /// Batch statistics `(layer, mean, unbiased variance)` observed during a training forward.
    pub fn take_bn_updates(&mut self) -> Vec<(String, Vec<T>, Vec<T>)> {
        std::mem::take(&mut self.bn_updates)
    }
}

/// Folds batch statistics into running estimates with momentum [`BN_MOMENTUM`].
pub fn apply_bn_updates<T: Scalar>(store: &mut ParamStore<T>, updates: &[(String, Vec<T>, Vec<T>)]) -> Result<()> {
    let m = T::from_f64(BN_MOMENTUM);
    let keep = T::one() - m;
    for (name, mean, var) in updates {
        for (buf, fresh) in [("running_mean", mean), ("running_var", var)] {
            let t = store.buffer_mut(&format!("{name}.{buf}"))?;
            for (r, &f) in t.data_mut().iter_mut().zip(fresh) {
                *r = keep * *r + m * f;
            }
        }
    }
    Ok(())
}

/// Independent generator per parameter name, so a layer's initial weights do not depend on
/// which other layers a model variant contains.
pub fn layer_rng(seed: u64, name: &str) -> ChaCha8Rng {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

fn kaiming<R: Rng>(rng: &mut R, shape: Vec<usize>, fan_in: usize) -> Tensor<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}

/// Convolution layer description; its weights live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub spec: ConvSpec,
    pub bias: bool,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore<f64>,
        seed: u64,
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        spec: ConvSpec,
        bias: bool,
    ) -> Self {
        let name = name.into();
        let cin_g = in_channels / spec.groups;
        let fan_in = cin_g * kernel.0 * kernel.1;
        let mut rng = layer_rng(seed, &name);
        store.insert(
            format!("{name}.weight"),
            kaiming(&mut rng, vec![out_channels, cin_g, kernel.0, kernel.1], fan_in),
        );
        if bias {
            store.insert(format!("{name}.bias"), Tensor::zeros(vec![out_channels]));
        }
        Self {
            name,
            in_channels,
            out_channels,
            kernel,
            spec,
            bias,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let w = s.param(&self.weight_name())?;
        let b = if self.bias {
            Some(s.param(&self.bias_name())?)
        } else {
            None
        };
        s.graph.conv2d(x, w, b, self.spec)
    }
}

/// Batch or group normalization with learnable per-channel scale and shift.
#[derive(Clone, Debug)]
pub struct Norm {
    pub name: String,
    pub kind: NormKind,
    pub channels: usize,
}

impl Norm {
    pub fn batch(store: &mut ParamStore<f64>, name: impl Into<String>, channels: usize) -> Self {
        let n = Self::register(store, name.into(), NormKind::Batch, channels);
        store.insert_buffer(format!("{}.running_mean", n.name), Tensor::zeros(vec![channels]));
        store.insert_buffer(format!("{}.running_var", n.name), Tensor::ones(vec![channels]));
        n
    }

    /// Group norm with the library-wide group rule ([`default_groups`]).
    pub fn group(store: &mut ParamStore<f64>, name: impl Into<String>, channels: usize) -> Self {
        Self::register(store, name.into(), NormKind::Group(default_groups(channels)), channels)
    }

    fn register(store: &mut ParamStore<f64>, name: String, kind: NormKind, channels: usize) -> Self {
        store.insert(format!("{name}.scale"), Tensor::ones(vec![channels]));
        store.insert(format!("{name}.shift"), Tensor::zeros(vec![channels]));
        Self {
            name,
            kind,
            channels,
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let scale = s.param(&format!("{}.scale", self.name))?;
        let shift = s.param(&format!("{}.shift", self.name))?;
        match self.kind {
            NormKind::Batch if s.is_training() => {
                let (y, stats) = s.graph.normalize(x, scale, shift, self.kind, NORM_EPS, None)?;
                let (b, _, h, w) = s.graph.value(x).dims4()?;
                let n = (b * h * w) as f64;
                let correction = T::from_f64(if n > 1.0 { n / (n - 1.0) } else { 1.0 });
                let unbiased = stats.var.iter().map(|&v| v * correction).collect();
                s.bn_updates.push((self.name.clone(), stats.mean, unbiased));
                Ok(y)
            }
            NormKind::Batch => {
                let mean = s.store.buffer(&format!("{}.running_mean", self.name))?.data().to_vec();
                let var = s.store.buffer(&format!("{}.running_var", self.name))?.data().to_vec();
                let (y, _) = s
                    .graph
                    .normalize(x, scale, shift, self.kind, NORM_EPS, Some((&mean, &var)))?;
                Ok(y)
            }
            NormKind::Group(_) => {
                let (y, _) = s.graph.normalize(x, scale, shift, self.kind, NORM_EPS, None)?;
                Ok(y)
            }
        }
    }
}

/// Convolution, optional normalization, optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: Option<Norm>,
    pub relu: bool,
}

impl ConvBlock {
    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let mut y = self.conv.forward(s, x)?;
        if let Some(n) = &self.norm {
            y = n.forward(s, y)?;
        }
        if self.relu {
            y = s.graph.relu(y)?;
        }
        Ok(y)
    }
}
