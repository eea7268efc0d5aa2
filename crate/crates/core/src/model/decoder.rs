//! Low-resolution head, coarse full-resolution head, and residual refinement.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::kernels::conv::ConvSpec;
use crate::kernels::Padding;
use crate::nn::{Conv2d, ConvBlock, ParamStore, Session};
use crate::tensor::Scalar;

fn relu_conv(store: &mut ParamStore<f64>, seed: u64, name: &str, cin: usize, cout: usize, k: usize) -> ConvBlock {
    ConvBlock {
        conv: Conv2d::new(store, seed, name, cin, cout, (k, k), ConvSpec::same(Padding::Zero), true),
        norm: None,
        relu: true,
    }
}

fn head(store: &mut ParamStore<f64>, seed: u64, name: &str, cin: usize) -> Conv2d {
    Conv2d::new(store, seed, name, cin, 1, (1, 1), ConvSpec::default(), true)
}

/// `3x3 conv + ReLU -> 1x1 conv` producing stride-4 logits.
#[derive(Clone, Debug)]
pub struct LowHead {
    pub hidden: ConvBlock,
    pub predict: Conv2d,
}

impl LowHead {
    pub fn new(store: &mut ParamStore<f64>, seed: u64, c: usize) -> Self {
        let half = (c / 2).max(1);
        Self {
            hidden: relu_conv(store, seed, "dec.low.hidden", c, half, 3),
            predict: head(store, seed, "dec.low.predict", half),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, fd: Var) -> Result<Var> {
        let x = self.hidden.forward(s, fd)?;
        self.predict.forward(s, x)
    }
}

/// Reads the decoded features together with the low-resolution logits and upsamples twice by 2.
#[derive(Clone, Debug)]
pub struct CoarseHead {
    pub entry: ConvBlock,
    pub up: [ConvBlock; 2],
    pub predict: Conv2d,
}

impl CoarseHead {
    pub fn new(store: &mut ParamStore<f64>, seed: u64, c: usize) -> Self {
        let half = (c / 2).max(1);
        Self {
            entry: relu_conv(store, seed, "dec.coarse.entry", c + 1, half, 3),
            up: [
                relu_conv(store, seed, "dec.coarse.up1", half, half, 3),
                relu_conv(store, seed, "dec.coarse.up2", half, half, 3),
            ],
            predict: head(store, seed, "dec.coarse.predict", half),
        }
    }

    /// `full` is the input image extent, which must be exactly four times the feature extent.
    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, fd: Var, low: Var, full: (usize, usize)) -> Result<Var> {
        let (_, _, h, w) = s.graph.value(fd).dims4()?;
        if full != (4 * h, 4 * w) {
            return Err(Error::config(format!(
                "image extents {}x{} are not four times the feature extents {h}x{w}",
                full.0, full.1
            )));
        }
        let cat = s.graph.concat(&[fd, low])?;
        let mut x = self.entry.forward(s, cat)?;
        let (mut ch, mut cw) = (h, w);
        for block in &self.up {
            ch *= 2;
            cw *= 2;
            x = s.graph.resize_bilinear(x, ch, cw)?;
            x = block.forward(s, x)?;
        }
        self.predict.forward(s, x)
    }
}

/// Adds a full-resolution residual computed from the image, the coarse logits, and reduced
/// stride-4 pyramid features.
#[derive(Clone, Debug)]
pub struct Refiner {
    pub reduce: Conv2d,
    pub hidden: [ConvBlock; 2],
    pub residual: Conv2d,
}

impl Refiner {
    pub fn new(store: &mut ParamStore<f64>, seed: u64, c: usize, reduced: usize, hidden: usize) -> Self {
        Self {
            reduce: Conv2d::new(store, seed, "dec.refine.reduce", c, reduced, (1, 1), ConvSpec::default(), true),
            hidden: [
                relu_conv(store, seed, "dec.refine.hidden1", 3 + 1 + reduced, hidden, 3),
                relu_conv(store, seed, "dec.refine.hidden2", hidden, hidden, 3),
            ],
            residual: head(store, seed, "dec.refine.residual", hidden),
        }
    }

    /// The residual term alone.
    pub fn residual<T: Scalar>(&self, s: &mut Session<T>, image: Var, coarse: Var, p1: Var) -> Result<Var> {
        let (_, _, h, w) = s.graph.value(coarse).dims4()?;
        let r = self.reduce.forward(s, p1)?;
        let r = s.graph.resize_bilinear(r, h, w)?;
        let cat = s.graph.concat(&[image, coarse, r])?;
        let x = self.hidden[0].forward(s, cat)?;
        let x = self.hidden[1].forward(s, x)?;
        self.residual.forward(s, x)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, image: Var, coarse: Var, p1: Var) -> Result<Var> {
        let r = self.residual(s, image, coarse, p1)?;
        s.graph.add(coarse, r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_features_with_zero_biases_give_zero_low_logits() {
        let mut store = ParamStore::new();
        let head = LowHead::new(&mut store, 5, 8);
        let store = store.cast::<f64>();
        let mut s = Session::new(&store, false);
        let fd = s.input(Tensor::zeros(vec![2, 8, 6, 6]));
        let y = head.forward(&mut s, fd).unwrap();
        assert_eq!(s.graph.shape(y), &[2, 1, 6, 6]);
        assert!(s.graph.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn coarse_head_quadruples_extent_and_checks_image_size() {
        let mut store = ParamStore::new();
        let head = CoarseHead::new(&mut store, 5, 8);
        let store = store.cast::<f32>();
        let mut s = Session::new(&store, false);
        let fd = s.input(Tensor::full(vec![1, 8, 6, 5], 0.3));
        let low = s.input(Tensor::zeros(vec![1, 1, 6, 5]));
        let y = head.forward(&mut s, fd, low, (24, 20)).unwrap();
        assert_eq!(s.graph.shape(y), &[1, 1, 24, 20]);
        assert!(matches!(head.forward(&mut s, fd, low, (24, 24)), Err(Error::Config(_))));
    }

    #[test]
    fn zero_weight_coarse_head_is_constant_bias() {
        let mut store = ParamStore::new();
        let head = CoarseHead::new(&mut store, 5, 4);
        for (name, t) in store.params_mut() {
            if name.starts_with("dec.coarse.") {
                t.data_mut().fill(0.0);
            }
        }
        store.get_mut("dec.coarse.predict.bias").unwrap().data_mut()[0] = 0.75;
        let mut s = Session::new(&store, false);
        let fd = s.input(Tensor::from_fn(vec![1, 4, 3, 3], |i| i as f64));
        let low = s.input(Tensor::full(vec![1, 1, 3, 3], 2.0));
        let y = head.forward(&mut s, fd, low, (12, 12)).unwrap();
        assert!(s.graph.value(y).data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn zeroed_residual_layer_returns_coarse_logits_exactly() {
        let mut store = ParamStore::new();
        let refiner = Refiner::new(&mut store, 9, 8, 16, 32);
        store.get_mut("dec.refine.residual.weight").unwrap().data_mut().fill(0.0);
        let store = store.cast::<f32>();
        let mut s = Session::new(&store, false);
        let image = s.input(Tensor::from_fn(vec![1, 3, 16, 16], |i| (i % 7) as f32 / 7.0));
        let coarse = s.input(Tensor::from_fn(vec![1, 1, 16, 16], |i| (i as f32 * 0.1).sin()));
        let p1 = s.input(Tensor::from_fn(vec![1, 8, 4, 4], |i| (i as f32 * 0.3).cos()));
        let sf = refiner.forward(&mut s, image, coarse, p1).unwrap();
        assert_eq!(s.graph.value(sf), s.graph.value(coarse));
    }
}
