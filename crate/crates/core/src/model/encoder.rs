//! Convolutional encoder and the top-down pyramid that produces the shared base representation.

use crate::autodiff::Var;
use crate::error::Result;
use crate::kernels::conv::ConvSpec;
use crate::kernels::Padding;
use crate::nn::{Conv2d, ConvBlock, Norm, ParamStore, Session};
use crate::tensor::Scalar;

fn down_block(store: &mut ParamStore<f64>, seed: u64, name: &str, cin: usize, cout: usize) -> ConvBlock {
    ConvBlock {
        conv: Conv2d::new(
            store,
            seed,
            name,
            cin,
            cout,
            (3, 3),
            ConvSpec::same(Padding::Zero).with_stride(2),
            false,
        ),
        norm: Some(Norm::group(store, format!("{name}.norm"), cout)),
        relu: true,
    }
}

/// Four feature maps at strides 4, 8, 16, 32.
#[derive(Clone, Copy, Debug)]
pub struct EncoderStages {
    pub levels: [Var; 4],
}

/// Two stride-2 stem blocks followed by three stride-2 stages.
#[derive(Clone, Debug)]
pub struct Encoder {
    stem: [ConvBlock; 2],
    stages: [ConvBlock; 3],
}

impl Encoder {
    pub fn new(store: &mut ParamStore<f64>, seed: u64, stem: usize, channels: [usize; 4]) -> Self {
        let stem = [
            down_block(store, seed, "enc.stem1", 3, stem),
            down_block(store, seed, "enc.stem2", stem, channels[0]),
        ];
        let stages = [
            down_block(store, seed, "enc.stage1", channels[0], channels[1]),
            down_block(store, seed, "enc.stage2", channels[1], channels[2]),
            down_block(store, seed, "enc.stage3", channels[2], channels[3]),
        ];
        Self { stem, stages }
    }

    pub fn encode<T: Scalar>(&self, s: &mut Session<T>, image: Var) -> Result<EncoderStages> {
        let mut x = image;
        for b in &self.stem {
            x = b.forward(s, x)?;
        }
        let c1 = x;
        let c2 = self.stages[0].forward(s, c1)?;
        let c3 = self.stages[1].forward(s, c2)?;
        let c4 = self.stages[2].forward(s, c3)?;
        Ok(EncoderStages {
            levels: [c1, c2, c3, c4],
        })
    }
}

/// Projected stages, pyramid levels, and their fusion.
#[derive(Clone, Copy, Debug)]
pub struct Pyramid {
    pub projected: [Var; 4],
    pub levels: [Var; 4],
    pub base: Var,
}

/// Lateral 1x1 projections, top-down additive pathway, and the concat + 1x1 + GroupNorm + ReLU
/// fusion at the finest level.
#[derive(Clone, Debug)]
pub struct PyramidFusion {
    pub lateral: [Conv2d; 4],
    pub fuse: ConvBlock,
}

impl PyramidFusion {
    pub fn new(store: &mut ParamStore<f64>, seed: u64, channels: [usize; 4], unified: usize) -> Self {
        let lateral = std::array::from_fn(|i| {
            Conv2d::new(
                store,
                seed,
                format!("pyr.lateral{}", i + 1),
                channels[i],
                unified,
                (1, 1),
                ConvSpec::default(),
                true,
            )
        });
        let fuse = ConvBlock {
            conv: Conv2d::new(
                store,
                seed,
                "pyr.fuse",
                4 * unified,
                unified,
                (1, 1),
                ConvSpec::default(),
                false,
            ),
            norm: Some(Norm::group(store, "pyr.fuse.norm", unified)),
            relu: true,
        };
        Self { lateral, fuse }
    }

    pub fn project<T: Scalar>(&self, s: &mut Session<T>, stages: &EncoderStages) -> Result<[Var; 4]> {
        let mut out = stages.levels;
        for (o, (layer, &c)) in out.iter_mut().zip(self.lateral.iter().zip(&stages.levels)) {
            *o = layer.forward(s, c)?;
        }
        Ok(out)
    }

    /// Top-down pass: `P4 = C4'`, `P_i = C_i' + up(P_{i+1})`, each upsampled to the finer extents.
    pub fn top_down<T: Scalar>(&self, s: &mut Session<T>, projected: [Var; 4]) -> Result<[Var; 4]> {
        let mut levels = projected;
        for i in (0..3).rev() {
            let (_, _, h, w) = s.graph.value(projected[i]).dims4()?;
            let up = s.graph.resize_bilinear(levels[i + 1], h, w)?;
            levels[i] = s.graph.add(projected[i], up)?;
        }
        Ok(levels)
    }

    pub fn fuse<T: Scalar>(&self, s: &mut Session<T>, levels: [Var; 4]) -> Result<Var> {
        let (_, _, h, w) = s.graph.value(levels[0]).dims4()?;
        let mut parts = vec![levels[0]];
        for &p in &levels[1..] {
            parts.push(s.graph.resize_bilinear(p, h, w)?);
        }
        let cat = s.graph.concat(&parts)?;
        self.fuse.forward(s, cat)
    }

    pub fn build_base<T: Scalar>(&self, s: &mut Session<T>, stages: &EncoderStages) -> Result<Pyramid> {
        let projected = self.project(s, stages)?;
        let levels = self.top_down(s, projected)?;
        let base = self.fuse(s, levels)?;
        Ok(Pyramid {
            projected,
            levels,
            base,
        })
    }
}
