//! Supervision targets and the multi-level training objective.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::pool::{pool2d, PoolKind, PoolSpec};
use crate::kernels::resize::resize_bilinear;
use crate::kernels::Padding;
use crate::model::Features;
use crate::tensor::{Scalar, Tensor};

/// Loss coefficients. `final_w`, `coarse` and `low` weight the saliency terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub final_w: f64,
    pub coarse: f64,
    pub low: f64,
    pub boundary: f64,
    pub coordination: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            final_w: 4.0,
            coarse: 0.25,
            low: 0.25,
            boundary: 1.0,
            coordination: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("final_w", self.final_w),
            ("coarse", self.coarse),
            ("low", self.low),
            ("boundary", self.boundary),
            ("coordination", self.coordination),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("loss weight {name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Form of the saliency loss applied at each decoder level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructureLossKind {
    /// Pixel-weighted BCE plus pixel-weighted soft IoU.
    Weighted,
    /// Unweighted BCE plus soft IoU.
    Plain,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisionConfig {
    pub structure: StructureLossKind,
    /// Amplitude `a` in `1 + a * |avgpool(target) - target|`.
    pub weight_amplitude: f64,
    pub weight_kernel: usize,
    /// Max-pool kernel applied to the downsampled boundary map.
    pub dilation_kernel: usize,
    /// Average-pool kernel applied after dilation.
    pub smoothing_kernel: usize,
    pub dice_eps: f64,
}

impl Default for SupervisionConfig {
    fn default() -> Self {
        Self {
            structure: StructureLossKind::Weighted,
            weight_amplitude: 5.0,
            weight_kernel: 15,
            dilation_kernel: 5,
            smoothing_kernel: 5,
            dice_eps: 1.0,
        }
    }
}

impl SupervisionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, k) in [
            ("weight_kernel", self.weight_kernel),
            ("dilation_kernel", self.dilation_kernel),
            ("smoothing_kernel", self.smoothing_kernel),
        ] {
            if k == 0 || k % 2 == 0 {
                return Err(Error::config(format!("{name} must be odd, got {k}")));
            }
        }
        if !(self.weight_amplitude.is_finite() && self.weight_amplitude >= 0.0) {
            return Err(Error::config("weight_amplitude must be finite and non-negative"));
        }
        if !(self.dice_eps.is_finite() && self.dice_eps > 0.0) {
            return Err(Error::config("dice_eps must be positive"));
        }
        Ok(())
    }
}

fn same_pool<T: Scalar>(x: &Tensor<T>, kind: PoolKind, k: usize) -> Result<Tensor<T>> {
    Ok(pool2d(x, &PoolSpec::same(kind, k, Padding::Replicate))?.0)
}

fn check_binary<T: Scalar>(mask: &Tensor<T>) -> Result<()> {
    if let Some(i) = mask.data().iter().position(|&v| v != T::zero() && v != T::one()) {
        return Err(Error::validation(format!(
            "mask must be binary, found {} at flat index {i}",
            mask.data()[i].to_f64()
        )));
    }
    Ok(())
}

/// Morphological gradient `dilate3(M) - erode3(M)` with replicate borders.
pub fn boundary_from_mask<T: Scalar>(mask: &Tensor<T>) -> Result<Tensor<T>> {
    check_binary(mask)?;
    let dilated = same_pool(mask, PoolKind::Max, 3)?;
    let eroded = same_pool(&mask.map(|v| -v), PoolKind::Max, 3)?;
    let data = dilated
        .data()
        .iter()
        .zip(eroded.data())
        .map(|(&d, &neg_e)| if d + neg_e > T::zero() { T::one() } else { T::zero() })
        .collect();
    Tensor::from_vec(mask.shape().to_vec(), data)
}

/// Dilated then smoothed boundary band: `avgpool(maxpool(E_s))`.
pub fn coordination_target<T: Scalar>(e_s: &Tensor<T>, cfg: &SupervisionConfig) -> Result<Tensor<T>> {
    let dilated = same_pool(e_s, PoolKind::Max, cfg.dilation_kernel)?;
    same_pool(&dilated, PoolKind::Avg, cfg.smoothing_kernel)
}

/// Pixel weights `1 + a * |avgpool(target) - target|` emphasising transitions.
pub fn structure_weight<T: Scalar>(target: &Tensor<T>, amplitude: f64, kernel: usize) -> Result<Tensor<T>> {
    let pooled = same_pool(target, PoolKind::Avg, kernel)?;
    let a = T::from_f64(amplitude);
    let data = pooled
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| T::one() + a * (p - t).abs())
        .collect();
    Tensor::from_vec(target.shape().to_vec(), data)
}

/// Saliency loss on logits against a target in `[0, 1]`.
pub fn structure_loss<T: Scalar>(g: &mut Graph<T>, logits: Var, target: &Tensor<T>, cfg: &SupervisionConfig) -> Result<Var> {
    let weight = match cfg.structure {
        StructureLossKind::Weighted => Some(structure_weight(target, cfg.weight_amplitude, cfg.weight_kernel)?),
        StructureLossKind::Plain => None,
    };
    let bce = g.bce_with_logits(logits, target, weight.as_ref())?;
    let iou = g.weighted_iou(logits, target, weight.as_ref())?;
    g.add(bce, iou)
}

/// Mean BCE with logits plus Dice on `sigmoid(logits)`.
pub fn boundary_loss<T: Scalar>(g: &mut Graph<T>, logits: Var, e_s: &Tensor<T>, cfg: &SupervisionConfig) -> Result<Var> {
    let bce = g.bce_with_logits(logits, e_s, None)?;
    let dice = g.dice(logits, e_s, T::from_f64(cfg.dice_eps))?;
    g.add(bce, dice)
}

/// Mean BCE with logits of the coordination logits against the soft target.
pub fn scm_loss<T: Scalar>(g: &mut Graph<T>, logits: Var, r_star: &Tensor<T>) -> Result<Var> {
    g.bce_with_logits(logits, r_star, None)
}

/// Targets at input resolution (`mask`, `boundary`) and at feature resolution (`*_s`).
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisionTargets<T> {
    pub mask: Tensor<T>,
    pub mask_s: Tensor<T>,
    pub boundary: Tensor<T>,
    pub boundary_s: Tensor<T>,
    pub r_star: Tensor<T>,
}

impl<T: Scalar> SupervisionTargets<T> {
    /// Builds every target from a binary mask batch `[B, 1, H, W]`; `(h, w)` is the feature extent.
    pub fn new(mask: Tensor<T>, h: usize, w: usize, cfg: &SupervisionConfig) -> Result<Self> {
        let (_, c, _, _) = mask.dims4()?;
        if c != 1 {
            return Err(Error::validation(format!("mask must have one channel, got {c}")));
        }
        let boundary = boundary_from_mask(&mask)?;
        let mask_s = resize_bilinear(&mask, h, w)?;
        let boundary_s = resize_bilinear(&boundary, h, w)?;
        let r_star = coordination_target(&boundary_s, cfg)?;
        Ok(Self {
            mask,
            mask_s,
            boundary,
            boundary_s,
            r_star,
        })
    }
}

/// Loss nodes of one batch. Heads a model variant lacks have no term.
#[derive(Clone, Copy, Debug)]
pub struct LossBundle {
    pub total: Var,
    pub seg: Var,
    pub boundary: Option<Var>,
    pub coordination: Option<Var>,
}

/// Scalar values of a [`LossBundle`], zero for absent terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub seg: f64,
    pub boundary: f64,
    pub coordination: f64,
}

impl LossBundle {
    pub fn values<T: Scalar>(&self, g: &Graph<T>) -> LossValues {
        let get = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).item().to_f64());
        LossValues {
            total: get(Some(self.total)),
            seg: get(Some(self.seg)),
            boundary: get(self.boundary),
            coordination: get(self.coordination),
        }
    }
}

/// Full objective. The final-map term applies to whichever logits are final for the decoder
/// variant; the coarse term only exists when a refinement stage follows the coarse head.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    features: &Features,
    targets: &SupervisionTargets<T>,
    weights: &LossWeights,
    cfg: &SupervisionConfig,
) -> Result<LossBundle> {
    weights.validate()?;
    let w = |v: f64| T::from_f64(v);
    let mut seg_terms = vec![(structure_loss(g, features.final_logits, &targets.mask, cfg)?, w(weights.final_w))];
    if let (Some(coarse), Some(_)) = (features.coarse_logits, features.refined_logits) {
        seg_terms.push((structure_loss(g, coarse, &targets.mask, cfg)?, w(weights.coarse)));
    }
    seg_terms.push((structure_loss(g, features.low_logits, &targets.mask_s, cfg)?, w(weights.low)));
    let seg = g.combine(&seg_terms)?;

    let boundary = features
        .boundary_logits()
        .map(|e| boundary_loss(g, e, &targets.boundary_s, cfg))
        .transpose()?;
    let coordination = features
        .coordination_logits()
        .map(|a| scm_loss(g, a, &targets.r_star))
        .transpose()?;

    let mut terms = vec![(seg, T::one())];
    if let Some(b) = boundary {
        terms.push((b, w(weights.boundary)));
    }
    if let Some(c) = coordination {
        terms.push((c, w(weights.coordination)));
    }
    let total = g.combine(&terms)?;
    Ok(LossBundle {
        total,
        seg,
        boundary,
        coordination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Tensor<f64> {
        Tensor::from_fn(vec![1, 1, h, w], |i| f(i / w, i % w))
    }

    #[test]
    fn default_weights() {
        let w = LossWeights::default();
        assert_eq!((w.final_w, w.coarse, w.low), (4.0, 0.25, 0.25));
        assert_eq!((w.boundary, w.coordination), (1.0, 1.0));
    }

    #[test]
    fn negative_weight_is_rejected() {
        let w = LossWeights {
            boundary: -0.1,
            ..LossWeights::default()
        };
        assert!(matches!(w.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn boundary_of_empty_and_full_masks_is_empty() {
        for v in [0.0, 1.0] {
            let e = boundary_from_mask(&field(6, 7, |_, _| v)).unwrap();
            assert!(e.data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn single_pixel_boundary_is_its_neighbourhood() {
        let e = boundary_from_mask(&field(7, 7, |r, c| if (r, c) == (3, 3) { 1.0 } else { 0.0 })).unwrap();
        for r in 0..7usize {
            for c in 0..7usize {
                let near = r.abs_diff(3) <= 1 && c.abs_diff(3) <= 1;
                assert_eq!(e.at4(0, 0, r, c), if near { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn non_binary_mask_is_rejected() {
        assert!(matches!(
            boundary_from_mask(&field(3, 3, |_, _| 0.5)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn row_of_ones_decays_in_fifths() {
        let e = field(15, 9, |r, _| if r == 7 { 1.0 } else { 0.0 });
        let r = coordination_target(&e, &SupervisionConfig::default()).unwrap();
        for row in 0..15usize {
            let d = row.abs_diff(7);
            let expect = (5.0 - d as f64).max(0.0) / 5.0;
            for col in 0..9 {
                assert!((r.at4(0, 0, row, col) - expect).abs() < 1e-12, "row {row}");
            }
        }
    }

    #[test]
    fn constant_target_has_unit_weights() {
        let w = structure_weight(&field(20, 20, |_, _| 1.0), 5.0, 15).unwrap();
        assert!(w.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn transitions_get_larger_weights_than_interior() {
        let t = field(32, 32, |_, c| if c >= 16 { 1.0 } else { 0.0 });
        let w = structure_weight(&t, 5.0, 15).unwrap();
        assert!(w.at4(0, 0, 10, 16) > w.at4(0, 0, 10, 31));
        assert!(w.at4(0, 0, 10, 15) > w.at4(0, 0, 10, 0));
    }

    #[test]
    fn structure_loss_at_zero_logits_on_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![1, 1, 8, 8]));
        let l = structure_loss(&mut g, x, &Tensor::ones(vec![1, 1, 8, 8]), &SupervisionConfig::default()).unwrap();
        let expect = std::f64::consts::LN_2 + 0.5;
        assert!((g.value(l).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_structure_loss_vanishes() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(vec![2, 1, 8, 8], 20.0));
        let l = structure_loss(&mut g, x, &Tensor::ones(vec![2, 1, 8, 8]), &SupervisionConfig::default()).unwrap();
        assert!(g.value(l).item() < 1e-6);
    }

    #[test]
    fn scm_loss_at_half_target_is_ln2() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(vec![1, 1, 4, 4]));
        let l = scm_loss(&mut g, a, &Tensor::full(vec![1, 1, 4, 4], 0.5)).unwrap();
        assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_boundary_prediction_is_nearly_free() {
        let e = field(8, 8, |r, _| if r == 4 { 1.0 } else { 0.0 });
        let mut g = Graph::new();
        let x = g.constant(e.map(|v| if v > 0.5 { 20.0 } else { -20.0 }));
        let l = boundary_loss(&mut g, x, &e, &SupervisionConfig::default()).unwrap();
        assert!(g.value(l).item() < 1e-6);
    }
}
