//! The saliency network: shared pyramid, boundary/region branches, spatial coordination, and the
//! coarse-to-fine decoder.

pub mod decoder;
pub mod encoder;
pub mod specialization;

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Session};
use crate::tensor::Scalar;

use decoder::{CoarseHead, LowHead, Refiner};
use encoder::{Encoder, PyramidFusion};
use specialization::{
    BoundaryBranch, BoundaryOutput, CoordinationOutput, Coordinator, RegionBranch, RegionOutput,
};

/// Which structural branches feed the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchMode {
    /// Decoder reads the shared base representation directly.
    Baseline,
    /// Boundary-sensitive branch only.
    Boundary,
    /// Region-coherent branch only.
    Region,
    /// Both branches blended by a coordinator.
    Full,
}

/// How the two branches are blended when both exist.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoordinationMode {
    /// Constant weight 0.5.
    FixedAverage,
    /// One learnable logit broadcast over every pixel.
    GlobalScalar,
    /// 3x3 convolution over the concatenated branches, no explicit weight map.
    ConcatConv,
    /// Per-pixel weight predicted from base features, boundary map, and branch discrepancy.
    Spatial,
}

/// Which prediction is the final map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderMode {
    /// Low-resolution head, bilinearly upsampled.
    LowRes,
    /// Coarse full-resolution head.
    Coarse,
    /// Coarse head plus residual refinement.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub stem_channels: usize,
    pub encoder_channels: [usize; 4],
    pub unified_channels: usize,
    pub laplacian: bool,
    pub rc_kernels: [usize; 2],
    /// Hidden width of the coordination function; `0` selects `unified_channels / 2`.
    pub scm_hidden: usize,
    pub refine_reduced: usize,
    pub refine_hidden: usize,
    pub branches: BranchMode,
    pub coordination: CoordinationMode,
    pub decoder: DecoderMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stem_channels: 16,
            encoder_channels: [32, 64, 128, 256],
            unified_channels: 64,
            laplacian: true,
            rc_kernels: [7, 15],
            scm_hidden: 0,
            refine_reduced: 16,
            refine_hidden: 32,
            branches: BranchMode::Full,
            coordination: CoordinationMode::Spatial,
            decoder: DecoderMode::Full,
        }
    }
}

impl ModelConfig {
    /// Small configuration for 64-bit gradient checks.
    pub fn tiny() -> Self {
        Self {
            stem_channels: 8,
            encoder_channels: [8, 8, 16, 16],
            unified_channels: 16,
            ..Self::default()
        }
    }

    pub fn scm_hidden_width(&self) -> usize {
        if self.scm_hidden == 0 {
            (self.unified_channels / 2).max(1)
        } else {
            self.scm_hidden
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.unified_channels < 2 {
            return Err(Error::config("unified_channels must be at least 2"));
        }
        if self.encoder_channels.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::config(format!(
                "encoder channels must be non-decreasing, got {:?}",
                self.encoder_channels
            )));
        }
        if self.encoder_channels.contains(&0) || self.stem_channels == 0 {
            return Err(Error::config("encoder widths must be positive"));
        }
        for k in self.rc_kernels {
            if k % 2 == 0 {
                return Err(Error::config(format!("region-branch kernel size {k} must be odd")));
            }
        }
        if self.refine_reduced == 0 || self.refine_hidden == 0 {
            return Err(Error::config("refinement widths must be positive"));
        }
        Ok(())
    }

    fn has_boundary(&self) -> bool {
        matches!(self.branches, BranchMode::Boundary | BranchMode::Full)
    }

    fn has_region(&self) -> bool {
        matches!(self.branches, BranchMode::Region | BranchMode::Full)
    }
}

/// Spatial extents must be divisible by the deepest encoder stride.
pub const STRIDE_MULTIPLE: usize = 32;

pub fn check_input_extents(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_multiple_of(STRIDE_MULTIPLE) || !w.is_multiple_of(STRIDE_MULTIPLE) {
        return Err(Error::config(format!(
            "input extents {h}x{w} must be positive multiples of {STRIDE_MULTIPLE}"
        )));
    }
    Ok(())
}

/// Every intermediate of one forward pass, as graph handles.
#[derive(Clone, Debug)]
pub struct Features {
    /// Encoder stages `C1..C4` at strides 4, 8, 16, 32.
    pub stages: [Var; 4],
    /// Per-stage 1x1 projections to the unified width.
    pub projected: [Var; 4],
    /// Top-down pyramid `P1..P4`.
    pub pyramid: [Var; 4],
    pub base: Var,
    pub boundary: Option<BoundaryOutput>,
    pub region: Option<RegionOutput>,
    pub coordination: Option<CoordinationOutput>,
    /// Representation the decoder reads.
    pub decoded_from: Var,
    /// Low-resolution logits.
    pub low_logits: Var,
    pub coarse_logits: Option<Var>,
    pub refined_logits: Option<Var>,
    /// Full-resolution logits of whichever head is final for the configured decoder.
    pub final_logits: Var,
    /// Final saliency probabilities at input resolution.
    pub saliency: Var,
}

impl Features {
    pub fn boundary_logits(&self) -> Option<Var> {
        self.boundary.as_ref().map(|b| b.logits)
    }

    pub fn coordination_logits(&self) -> Option<Var> {
        self.coordination.as_ref().and_then(|c| c.logits)
    }

    pub fn weight_map(&self) -> Option<Var> {
        self.coordination.as_ref().and_then(|c| c.weight)
    }
}

/// Layer layout of the network. Parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct DssNet {
    pub config: ModelConfig,
    encoder: Encoder,
    fusion: PyramidFusion,
    boundary: Option<BoundaryBranch>,
    region: Option<RegionBranch>,
    coordinator: Option<Coordinator>,
    low: LowHead,
    coarse: Option<CoarseHead>,
    refiner: Option<Refiner>,
}

impl DssNet {
    /// Builds the layer layout and freshly initialized parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore<f64>)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let c = config.unified_channels;
        let encoder = Encoder::new(&mut store, seed, config.stem_channels, config.encoder_channels);
        let fusion = PyramidFusion::new(&mut store, seed, config.encoder_channels, c);
        let boundary = config
            .has_boundary()
            .then(|| BoundaryBranch::new(&mut store, seed, c, config.laplacian));
        let region = config
            .has_region()
            .then(|| RegionBranch::new(&mut store, seed, c, config.rc_kernels));
        let coordinator = (config.branches == BranchMode::Full).then(|| {
            Coordinator::new(&mut store, seed, config.coordination, c, config.scm_hidden_width())
        });
        let low = LowHead::new(&mut store, seed, c);
        let coarse = (config.decoder != DecoderMode::LowRes).then(|| CoarseHead::new(&mut store, seed, c));
        let refiner = (config.decoder == DecoderMode::Full)
            .then(|| Refiner::new(&mut store, seed, c, config.refine_reduced, config.refine_hidden));
        Ok((
            Self {
                config,
                encoder,
                fusion,
                boundary,
                region,
                coordinator,
                low,
                coarse,
                refiner,
            },
            store,
        ))
    }

    pub fn boundary_branch(&self) -> Option<&BoundaryBranch> {
        self.boundary.as_ref()
    }

    pub fn region_branch(&self) -> Option<&RegionBranch> {
        self.region.as_ref()
    }

    pub fn coordinator(&self) -> Option<&Coordinator> {
        self.coordinator.as_ref()
    }

    pub fn refiner(&self) -> Option<&Refiner> {
        self.refiner.as_ref()
    }

    pub fn coarse_head(&self) -> Option<&CoarseHead> {
        self.coarse.as_ref()
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn fusion(&self) -> &PyramidFusion {
        &self.fusion
    }

    /// Full forward pass from an image batch `[B, 3, H, W]` in `[0, 1]`.
    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, image: Var) -> Result<Features> {
        let (_, ch, h, w) = s.graph.value(image).dims4()?;
        if ch != 3 {
            return Err(Error::config(format!("expected a 3-channel image, got {ch} channels")));
        }
        check_input_extents(h, w)?;

        let stages = self.encoder.encode(s, image)?;
        let pyramid = self.fusion.build_base(s, &stages)?;
        let base = pyramid.base;

        let boundary = self.boundary.as_ref().map(|b| b.forward(s, base)).transpose()?;
        let region = self.region.as_ref().map(|r| r.forward(s, base)).transpose()?;
        let (coordination, decoded_from) = match (&boundary, &region) {
            (Some(bs), Some(rc)) => {
                let coord = self
                    .coordinator
                    .as_ref()
                    .ok_or_else(|| Error::config("both branches present without a coordinator"))?
                    .forward(s, base, bs, rc.output)?;
                let fd = coord.blended;
                (Some(coord), fd)
            }
            (Some(bs), None) => (None, bs.features),
            (None, Some(rc)) => (None, rc.output),
            (None, None) => (None, base),
        };

        let low_logits = self.low.forward(s, decoded_from)?;
        let coarse_logits = self
            .coarse
            .as_ref()
            .map(|c| c.forward(s, decoded_from, low_logits, (h, w)))
            .transpose()?;
        let refined_logits = match (&self.refiner, coarse_logits) {
            (Some(r), Some(sc)) => Some(r.forward(s, image, sc, pyramid.levels[0])?),
            _ => None,
        };

        let (final_logits, saliency) = match self.config.decoder {
            DecoderMode::LowRes => {
                let up = s.graph.resize_bilinear(low_logits, h, w)?;
                let p = s.graph.sigmoid(low_logits)?;
                let p = s.graph.resize_bilinear(p, h, w)?;
                (up, p)
            }
            DecoderMode::Coarse | DecoderMode::Full => {
                let logits = refined_logits
                    .or(coarse_logits)
                    .ok_or_else(|| Error::config("decoder produced no full-resolution logits"))?;
                (logits, s.graph.sigmoid(logits)?)
            }
        };

        Ok(Features {
            stages: stages.levels,
            projected: pyramid.projected,
            pyramid: pyramid.levels,
            base,
            boundary,
            region,
            coordination,
            decoded_from,
            low_logits,
            coarse_logits,
            refined_logits,
            final_logits,
            saliency,
        })
    }
}

/// Parameter-name prefixes of the structural specialization components.
pub const BOUNDARY_PREFIX: &str = "bs.";
pub const REGION_PREFIX: &str = "rc.";
pub const COORDINATION_PREFIX: &str = "scm.";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn rejects_extents_not_divisible_by_32() {
        let (net, store) = DssNet::new(ModelConfig::tiny(), 0).unwrap();
        let store = store.cast::<f32>();
        let mut s = Session::new(&store, false);
        let x = s.input(Tensor::zeros(vec![1, 3, 48, 64]));
        assert!(matches!(net.forward(&mut s, x), Err(Error::Config(_))));
        assert!(s.graph.len() == 1, "no compute before validation");
    }

    #[test]
    fn output_shapes_for_desk_input() {
        let (net, store) = DssNet::new(ModelConfig::default(), 1).unwrap();
        let store = store.cast::<f32>();
        let mut s = Session::new(&store, true);
        let x = s.input(Tensor::full(vec![1, 3, 96, 96], 0.5));
        let f = net.forward(&mut s, x).unwrap();
        let g = &s.graph;
        let extents: Vec<usize> = f.stages.iter().map(|&v| g.shape(v)[2]).collect();
        assert_eq!(extents, vec![24, 12, 6, 3]);
        assert_eq!(g.shape(f.base), &[1, 64, 24, 24]);
        assert_eq!(g.shape(f.low_logits), &[1, 1, 24, 24]);
        assert_eq!(g.shape(f.coarse_logits.unwrap()), &[1, 1, 96, 96]);
        assert_eq!(g.shape(f.saliency), &[1, 1, 96, 96]);
        let m = g.value(f.saliency);
        assert!(m.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn branch_variants_build_only_their_components() {
        let mut cfg = ModelConfig::tiny();
        cfg.branches = BranchMode::Baseline;
        let (_, base) = DssNet::new(cfg.clone(), 3).unwrap();
        assert_eq!(base.num_params_with_prefix(BOUNDARY_PREFIX), 0);
        assert_eq!(base.num_params_with_prefix(REGION_PREFIX), 0);
        assert_eq!(base.num_params_with_prefix(COORDINATION_PREFIX), 0);
        cfg.branches = BranchMode::Full;
        let (_, full) = DssNet::new(cfg, 3).unwrap();
        let extra = full.num_params_with_prefix(BOUNDARY_PREFIX)
            + full.num_params_with_prefix(REGION_PREFIX)
            + full.num_params_with_prefix(COORDINATION_PREFIX);
        assert!(extra > 0);
        assert_eq!(full.num_params() - base.num_params(), extra);
        // Shared layers start from identical weights.
        assert_eq!(full.get("enc.stage3.weight").unwrap(), base.get("enc.stage3.weight").unwrap());
    }
}
