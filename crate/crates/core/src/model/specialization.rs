//! Boundary-sensitive branch, region-coherent branch, and their coordination.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::conv::ConvSpec;
use crate::kernels::Padding;
use crate::model::CoordinationMode;
use crate::nn::{Conv2d, ConvBlock, Norm, ParamStore, Session};
use crate::tensor::{Scalar, Tensor};

/// Four-neighbour discrete Laplacian stencil, row-major.
pub const LAPLACIAN_KERNEL: [f64; 9] = [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];

/// Fixed channel-wise Laplacian with reflect padding. The stencil is a graph constant and never
/// receives a gradient; gradients do flow through to `x`.
pub fn laplacian<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    laplacian_with_kernel(g, x, &LAPLACIAN_KERNEL)
}

/// Same as [`laplacian`] with an arbitrary 3x3 stencil.
pub fn laplacian_with_kernel<T: Scalar>(g: &mut Graph<T>, x: Var, kernel: &[f64; 9]) -> Result<Var> {
    let (_, c, _, _) = g.value(x).dims4()?;
    let w = Tensor::from_fn(vec![c, 1, 3, 3], |i| T::from_f64(kernel[i % 9]));
    let w = g.constant(w);
    g.conv2d(x, w, None, ConvSpec::same(Padding::Reflect).with_groups(c))
}

/// Per-pixel channel mean of `|a - b|`.
pub fn discrepancy<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let diff = g.sub(a, b)?;
    let diff = g.abs(diff)?;
    g.channel_mean(diff)
}

/// `w * a + (1 - w) * b` with a single-channel `w` broadcast over channels.
pub fn blend<T: Scalar>(g: &mut Graph<T>, w: Var, a: Var, b: Var) -> Result<Var> {
    let wa = g.mul(w, a)?;
    let rest = g.one_minus(w)?;
    let rb = g.mul(rest, b)?;
    g.add(wa, rb)
}

#[derive(Clone, Copy, Debug)]
pub struct BoundaryOutput {
    /// High-frequency response (Laplacian plus learnable high-pass).
    pub high_freq: Var,
    pub features: Var,
    /// Boundary head logits; the loss consumes these directly.
    pub logits: Var,
    /// `sigmoid(logits)`, fed to the coordinator.
    pub prob: Var,
}

/// Fixed Laplacian and learnable high-pass paths, a 3x3 transformation over the base
/// representation concatenated with the high-frequency response, and a 1x1 boundary head.
#[derive(Clone, Debug)]
pub struct BoundaryBranch {
    pub use_laplacian: bool,
    pub hp_depthwise: Conv2d,
    pub hp_pointwise: Conv2d,
    pub hp_norm: Norm,
    pub transform: ConvBlock,
    pub head: Conv2d,
}

impl BoundaryBranch {
    pub fn new(store: &mut ParamStore<f64>, seed: u64, c: usize, use_laplacian: bool) -> Self {
        let same = ConvSpec::same(Padding::Zero);
        Self {
            use_laplacian,
            hp_depthwise: Conv2d::new(store, seed, "bs.hp.dw", c, c, (3, 3), same.with_groups(c), false),
            hp_pointwise: Conv2d::new(store, seed, "bs.hp.pw", c, c, (1, 1), same, false),
            hp_norm: Norm::batch(store, "bs.hp.norm", c),
            transform: ConvBlock {
                conv: Conv2d::new(store, seed, "bs.transform", 2 * c, c, (3, 3), same, false),
                norm: Some(Norm::group(store, "bs.transform.norm", c)),
                relu: true,
            },
            head: Conv2d::new(store, seed, "bs.head", c, 1, (1, 1), same, true),
        }
    }

    pub fn high_pass<T: Scalar>(&self, s: &mut Session<T>, base: Var) -> Result<Var> {
        let x = self.hp_depthwise.forward(s, base)?;
        let x = self.hp_pointwise.forward(s, x)?;
        let x = self.hp_norm.forward(s, x)?;
        s.graph.relu(x)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, base: Var) -> Result<BoundaryOutput> {
        let hp = self.high_pass(s, base)?;
        let high_freq = if self.use_laplacian {
            let lap = laplacian(&mut s.graph, base)?;
            s.graph.add(lap, hp)?
        } else {
            hp
        };
        let cat = s.graph.concat(&[base, high_freq])?;
        let features = self.transform.forward(s, cat)?;
        let logits = self.head.forward(s, features)?;
        let prob = s.graph.sigmoid(logits)?;
        Ok(BoundaryOutput {
            high_freq,
            features,
            logits,
            prob,
        })
    }
}

/// Horizontal then vertical depthwise convolution (replicate padding), batch norm, ReLU.
#[derive(Clone, Debug)]
pub struct AnisotropicContext {
    pub kernel: usize,
    pub horizontal: Conv2d,
    pub vertical: Conv2d,
    pub norm: Norm,
}

impl AnisotropicContext {
    pub fn new(store: &mut ParamStore<f64>, seed: u64, name: &str, c: usize, k: usize) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(Error::config(format!("anisotropic kernel size {k} must be odd")));
        }
        let spec = ConvSpec::same(Padding::Replicate).with_groups(c);
        Ok(Self {
            kernel: k,
            horizontal: Conv2d::new(store, seed, format!("{name}.h"), c, c, (1, k), spec, false),
            vertical: Conv2d::new(store, seed, format!("{name}.v"), c, c, (k, 1), spec, false),
            norm: Norm::batch(store, format!("{name}.norm"), c),
        })
    }

    /// The separable convolution before normalization.
    pub fn separable<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let y = self.horizontal.forward(s, x)?;
        self.vertical.forward(s, y)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let y = self.separable(s, x)?;
        let y = self.norm.forward(s, y)?;
        s.graph.relu(y)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RegionOutput {
    /// Projected context term added to the base representation.
    pub context: Var,
    pub output: Var,
}

/// Residual dual-scale anisotropic context: `F_b + P(T([A_k1(F_b), A_k2(F_b)]))`.
#[derive(Clone, Debug)]
pub struct RegionBranch {
    pub contexts: [AnisotropicContext; 2],
    pub fuse: ConvBlock,
    pub project: Conv2d,
}

impl RegionBranch {
    pub fn new(store: &mut ParamStore<f64>, seed: u64, c: usize, kernels: [usize; 2]) -> Self {
        let contexts = kernels.map(|k| {
            AnisotropicContext::new(store, seed, &format!("rc.ctx{k}"), c, k)
                .expect("kernel sizes validated by ModelConfig")
        });
        let pw = ConvSpec::default();
        Self {
            contexts,
            fuse: ConvBlock {
                conv: Conv2d::new(store, seed, "rc.fuse", 2 * c, c, (1, 1), pw, true),
                norm: None,
                relu: true,
            },
            project: Conv2d::new(store, seed, "rc.project", c, c, (1, 1), pw, true),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, base: Var) -> Result<RegionOutput> {
        let a = self.contexts[0].forward(s, base)?;
        let b = self.contexts[1].forward(s, base)?;
        let cat = s.graph.concat(&[a, b])?;
        let fused = self.fuse.forward(s, cat)?;
        let context = self.project.forward(s, fused)?;
        let output = s.graph.add(base, context)?;
        Ok(RegionOutput { context, output })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CoordinationOutput {
    pub discrepancy: Var,
    /// Coordination logits, when the strategy produces them.
    pub logits: Option<Var>,
    /// Weight toward the boundary branch, when the strategy produces one.
    pub weight: Option<Var>,
    pub blended: Var,
}

/// Per-pixel coordination: 1x1 reduce, 3x3 mix, 1x1 logit head over `[F_b, E_hat, D]`.
#[derive(Clone, Debug)]
pub struct SpatialCoordination {
    pub reduce: ConvBlock,
    pub mix: ConvBlock,
    pub predict: Conv2d,
}

impl SpatialCoordination {
    pub fn new(store: &mut ParamStore<f64>, seed: u64, c: usize, hidden: usize) -> Self {
        let same = ConvSpec::same(Padding::Zero);
        Self {
            reduce: ConvBlock {
                conv: Conv2d::new(store, seed, "scm.reduce", c + 2, hidden, (1, 1), same, true),
                norm: None,
                relu: true,
            },
            mix: ConvBlock {
                conv: Conv2d::new(store, seed, "scm.mix", hidden, hidden, (3, 3), same, true),
                norm: None,
                relu: true,
            },
            predict: Conv2d::new(store, seed, "scm.predict", hidden, 1, (1, 1), same, true),
        }
    }

    pub fn logits<T: Scalar>(&self, s: &mut Session<T>, base: Var, boundary_prob: Var, disc: Var) -> Result<Var> {
        let cat = s.graph.concat(&[base, boundary_prob, disc])?;
        let x = self.reduce.forward(s, cat)?;
        let x = self.mix.forward(s, x)?;
        self.predict.forward(s, x)
    }
}

/// Blending strategy between the two branches.
#[derive(Clone, Debug)]
pub enum Coordinator {
    Spatial(SpatialCoordination),
    FixedAverage,
    /// Name of the single learnable logit parameter.
    GlobalScalar(String),
    ConcatConv(Conv2d),
}

impl Coordinator {
    pub fn new(store: &mut ParamStore<f64>, seed: u64, mode: CoordinationMode, c: usize, hidden: usize) -> Self {
        match mode {
            CoordinationMode::Spatial => Coordinator::Spatial(SpatialCoordination::new(store, seed, c, hidden)),
            CoordinationMode::FixedAverage => Coordinator::FixedAverage,
            CoordinationMode::GlobalScalar => {
                let name = "scm.global_logit".to_string();
                store.insert(name.clone(), Tensor::zeros(vec![1, 1, 1, 1]));
                Coordinator::GlobalScalar(name)
            }
            CoordinationMode::ConcatConv => Coordinator::ConcatConv(Conv2d::new(
                store,
                seed,
                "scm.concat",
                2 * c,
                c,
                (3, 3),
                ConvSpec::same(Padding::Zero),
                true,
            )),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        s: &mut Session<T>,
        base: Var,
        boundary: &BoundaryOutput,
        region: Var,
    ) -> Result<CoordinationOutput> {
        let bs = boundary.features;
        let disc = discrepancy(&mut s.graph, bs, region)?;
        let (logits, weight, blended) = match self {
            Coordinator::Spatial(scm) => {
                let logits = scm.logits(s, base, boundary.prob, disc)?;
                let w = s.graph.sigmoid(logits)?;
                let fd = blend(&mut s.graph, w, bs, region)?;
                (Some(logits), Some(w), fd)
            }
            Coordinator::FixedAverage => {
                let shape = s.graph.shape(disc).to_vec();
                let w = s.graph.constant(Tensor::full(shape, T::from_f64(0.5)));
                let fd = blend(&mut s.graph, w, bs, region)?;
                (None, Some(w), fd)
            }
            Coordinator::GlobalScalar(name) => {
                let shape = s.graph.shape(disc).to_vec();
                let zeros = s.graph.constant(Tensor::zeros(shape));
                let logit = s.param(name)?;
                let logits = s.graph.add(zeros, logit)?;
                let w = s.graph.sigmoid(logits)?;
                let fd = blend(&mut s.graph, w, bs, region)?;
                (Some(logits), Some(w), fd)
            }
            Coordinator::ConcatConv(conv) => {
                let cat = s.graph.concat(&[bs, region])?;
                (None, None, conv.forward(s, cat)?)
            }
        };
        Ok(CoordinationOutput {
            discrepancy: disc,
            logits,
            weight,
            blended,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplacian_of_constant_is_zero() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::full(vec![2, 3, 5, 4], 1.7));
        let y = laplacian(&mut g, x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_annihilates_horizontal_ramp_in_interior() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(vec![1, 1, 5, 6], |i| (i % 6) as f64));
        let y = laplacian(&mut g, x).unwrap();
        let v = g.value(y);
        for r in 0..5 {
            for c in 1..5 {
                assert_eq!(v.at4(0, 0, r, c), 0.0);
            }
        }
    }

    #[test]
    fn laplacian_impulse_stamps_stencil() {
        let mut g = Graph::<f64>::new();
        let mut t = Tensor::zeros(vec![1, 1, 5, 5]);
        t.set4(0, 0, 2, 2, 1.0);
        let x = g.constant(t);
        let y = laplacian(&mut g, x).unwrap();
        let v = g.value(y);
        for r in 0..5 {
            for c in 0..5 {
                let expect = match (r as i32 - 2, c as i32 - 2) {
                    (0, 0) => -4.0,
                    (0, 1) | (0, -1) | (1, 0) | (-1, 0) => 1.0,
                    _ => 0.0,
                };
                assert_eq!(v.at4(0, 0, r, c), expect, "at {r},{c}");
            }
        }
    }

    #[test]
    fn even_anisotropic_kernel_is_rejected() {
        let mut store = ParamStore::new();
        assert!(matches!(
            AnisotropicContext::new(&mut store, 0, "x", 4, 8),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn identical_branches_have_zero_discrepancy_and_pass_through() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_fn(vec![1, 3, 4, 4], |i| (i as f64 * 0.37).sin()));
        let w = g.constant(Tensor::from_fn(vec![1, 1, 4, 4], |i| (i as f64) / 16.0));
        let d = discrepancy(&mut g, a, a).unwrap();
        assert!(g.value(d).data().iter().all(|&v| v == 0.0));
        let fd = blend(&mut g, w, a, a).unwrap();
        for (x, y) in g.value(fd).data().iter().zip(g.value(a).data()) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}
