//! Elementwise, structural, and loss operations together with every backward rule.

use super::broadcast::{broadcast_shape, for_each_pair};
use super::{BinaryKind, Graph, Node, Op, UnaryKind, Var};
use crate::error::{Error, Result};
use crate::kernels::{conv, norm, pool, resize};
use crate::tensor::{bce_logit, sigmoid, Scalar, Tensor};

impl<T: Scalar> Graph<T> {
    fn binary(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb)?;
        let mut out = Tensor::zeros(out_shape.clone());
        {
            let (ad, bd) = (self.value(a).data(), self.value(b).data());
            let od = out.data_mut();
            for_each_pair(&sa, &sb, &out_shape, |o, i, j| {
                od[o] = match kind {
                    BinaryKind::Add => ad[i] + bd[j],
                    BinaryKind::Sub => ad[i] - bd[j],
                    BinaryKind::Mul => ad[i] * bd[j],
                };
            });
        }
        self.push(out, Op::Binary { a, b, kind }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub)
    }

    /// Elementwise product with same-rank broadcasting (for example `[B,1,H,W] * [B,C,H,W]`).
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul)
    }

    fn unary(&mut self, x: Var, kind: UnaryKind) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).map(|v| match kind {
            UnaryKind::Abs => v.abs(),
            UnaryKind::Relu => v.max(T::zero()),
            UnaryKind::Sigmoid => sigmoid(v),
        });
        self.push(out, Op::Unary { x, kind }, &[x])
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Abs)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Sigmoid)
    }

    /// `mul * x + add`.
    pub fn affine(&mut self, x: Var, mul: T, add: T) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).map(|v| mul * v + add);
        self.push(out, Op::Affine { x, mul }, &[x])
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        self.affine(x, factor, T::zero())
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        self.affine(x, -T::one(), T::one())
    }

    /// Concatenates rank-4 tensors along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::config("channel concat needs at least one input"))?;
        for &p in parts {
            self.check(p)?;
        }
        let (b, _, h, w) = self.value(first).dims4()?;
        let mut channels = 0;
        for &p in parts {
            let (pb, pc, ph, pw) = self.value(p).dims4()?;
            if (pb, ph, pw) != (b, h, w) {
                return Err(Error::config(format!(
                    "channel concat extent mismatch: {:?} vs {:?}",
                    self.shape(first),
                    self.shape(p)
                )));
            }
            channels += pc;
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(b * channels * hw);
        for bi in 0..b {
            for &p in parts {
                let t = self.value(p);
                let per = t.shape()[1] * hw;
                data.extend_from_slice(&t.data()[bi * per..][..per]);
            }
        }
        let out = Tensor::from_vec(vec![b, channels, h, w], data)?;
        self.push(out, Op::Concat { parts: parts.to_vec() }, parts)
    }

    /// Mean over the channel axis of a rank-4 tensor, keeping a unit channel axis.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let (b, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let inv = T::one() / T::from_f64(c as f64);
        let mut out = Tensor::zeros(vec![b, 1, h, w]);
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            for bi in 0..b {
                for ci in 0..c {
                    let src = &xd[(bi * c + ci) * hw..][..hw];
                    for (o, &v) in od[bi * hw..][..hw].iter_mut().zip(src) {
                        *o += v;
                    }
                }
            }
            od.iter_mut().for_each(|v| *v *= inv);
        }
        self.push(out, Op::ChannelMean { x }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = Tensor::scalar(self.value(x).mean());
        self.push(out, Op::Mean { x }, &[x])
    }

    /// Linear combination `sum_i weight_i * x_i` of scalar nodes.
    pub fn combine(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut acc = T::zero();
        for &(v, w) in terms {
            self.check(v)?;
            if self.value(v).len() != 1 {
                return Err(Error::config("combine expects scalar terms"));
            }
            acc += w * self.value(v).item();
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        self.push(
            Tensor::scalar(acc),
            Op::Combine {
                terms: terms.to_vec(),
            },
            &inputs,
        )
    }

    fn loss_inputs(&self, logits: Var, target: &Tensor<T>, weight: Option<&Tensor<T>>) -> Result<usize> {
        self.check(logits)?;
        let shape = self.shape(logits);
        if shape != target.shape() {
            return Err(Error::config(format!(
                "loss target shape {:?} does not match logits {shape:?}",
                target.shape()
            )));
        }
        if let Some(w) = weight {
            if w.shape() != shape {
                return Err(Error::config("loss weight shape does not match logits"));
            }
        }
        Ok(shape.first().copied().unwrap_or(1).max(1))
    }

    /// Binary cross-entropy with logits, optionally pixel-weighted.
    ///
    /// Per batch item the loss is `sum(w * bce) / sum(w)` (a plain mean without weights); items
    /// are then averaged.
    pub fn bce_with_logits(&mut self, logits: Var, target: &Tensor<T>, weight: Option<&Tensor<T>>) -> Result<Var> {
        let items = self.loss_inputs(logits, target, weight)?;
        let x = self.value(logits).data();
        let n = x.len() / items;
        let mut total = T::zero();
        for b in 0..items {
            let range = b * n..(b + 1) * n;
            let (mut num, mut den) = (T::zero(), T::zero());
            for i in range {
                let w = weight.map_or(T::one(), |w| w.data()[i]);
                num += w * bce_logit(x[i], target.data()[i]);
                den += w;
            }
            total += num / den;
        }
        let out = Tensor::scalar(total / T::from_f64(items as f64));
        self.push(
            out,
            Op::WeightedBce {
                logits,
                target: target.clone(),
                weight: weight.cloned(),
            },
            &[logits],
        )
    }

    /// Soft intersection-over-union loss on `sigmoid(logits)`, optionally pixel-weighted.
    ///
    /// Per item: `1 - sum(w p t) / sum(w (p + t - p t))`, averaged over items.
    pub fn weighted_iou(&mut self, logits: Var, target: &Tensor<T>, weight: Option<&Tensor<T>>) -> Result<Var> {
        let items = self.loss_inputs(logits, target, weight)?;
        let x = self.value(logits).data();
        let n = x.len() / items;
        let mut total = T::zero();
        for b in 0..items {
            let (inter, union) = iou_sums(&x[b * n..][..n], &target.data()[b * n..][..n], weight.map(|w| &w.data()[b * n..][..n]));
            if union > T::zero() {
                total += T::one() - inter / union;
            }
        }
        let out = Tensor::scalar(total / T::from_f64(items as f64));
        self.push(
            out,
            Op::WeightedIou {
                logits,
                target: target.clone(),
                weight: weight.cloned(),
            },
            &[logits],
        )
    }

    /// Dice loss `1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps)` per item, averaged.
    pub fn dice(&mut self, logits: Var, target: &Tensor<T>, eps: T) -> Result<Var> {
        let items = self.loss_inputs(logits, target, None)?;
        let x = self.value(logits).data();
        let n = x.len() / items;
        let mut total = T::zero();
        for b in 0..items {
            let (num, den) = dice_sums(&x[b * n..][..n], &target.data()[b * n..][..n], eps);
            total += T::one() - num / den;
        }
        let out = Tensor::scalar(total / T::from_f64(items as f64));
        self.push(
            out,
            Op::Dice {
                logits,
                target: target.clone(),
                eps,
            },
            &[logits],
        )
    }
}

fn iou_sums<T: Scalar>(x: &[T], t: &[T], w: Option<&[T]>) -> (T, T) {
    let (mut inter, mut union) = (T::zero(), T::zero());
    for i in 0..x.len() {
        let p = sigmoid(x[i]);
        let wi = w.map_or(T::one(), |w| w[i]);
        inter += wi * p * t[i];
        union += wi * (p + t[i] - p * t[i]);
    }
    (inter, union)
}

fn dice_sums<T: Scalar>(x: &[T], t: &[T], eps: T) -> (T, T) {
    let two = T::from_f64(2.0);
    let (mut pt, mut ps, mut ts) = (T::zero(), T::zero(), T::zero());
    for i in 0..x.len() {
        let p = sigmoid(x[i]);
        pt += p * t[i];
        ps += p;
        ts += t[i];
    }
    (two * pt + eps, ps + ts + eps)
}

/// Gradient contributions of one node to its inputs. Inputs that do not require a gradient may
/// be skipped.
pub(super) fn backward_rule<T: Scalar>(
    op: &Op<T>,
    out: &Tensor<T>,
    g: &Tensor<T>,
    nodes: &[Node<T>],
) -> Result<Vec<(Var, Tensor<T>)>> {
    let val = |v: Var| &nodes[v.0].value;
    let wants = |v: Var| nodes[v.0].requires_grad;
    let mut grads = Vec::new();
    match op {
        Op::Leaf => {}
        Op::Conv { x, w, b, spec } => {
            let need = (wants(*x), wants(*w), b.is_some_and(wants));
            let cg = conv::conv2d_backward(val(*x), val(*w), g, spec, need)?;
            if let Some(dx) = cg.dx {
                grads.push((*x, dx));
            }
            if let Some(dw) = cg.dw {
                grads.push((*w, dw));
            }
            if let (Some(b), Some(db)) = (b, cg.db) {
                grads.push((*b, db));
            }
        }
        Op::Resize { x } => {
            grads.push((*x, resize::resize_bilinear_backward(val(*x).shape(), g)?));
        }
        Op::Pool { x, spec, argmax } => {
            grads.push((
                *x,
                pool::pool2d_backward(val(*x).shape(), g, spec, argmax.as_deref())?,
            ));
        }
        Op::Norm {
            x,
            scale,
            shift,
            kind,
            cache,
        } => {
            let (dx, dscale, dshift) =
                norm::normalize_backward(val(*x).shape(), g, val(*scale), *kind, cache)?;
            grads.push((*x, dx));
            grads.push((*scale, dscale));
            grads.push((*shift, dshift));
        }
        Op::Binary { a, b, kind } => {
            let (sa, sb) = (val(*a).shape(), val(*b).shape());
            let (ad, bd) = (val(*a).data(), val(*b).data());
            let mut da = Tensor::zeros(sa.to_vec());
            let mut db = Tensor::zeros(sb.to_vec());
            {
                let (dad, dbd) = (da.data_mut(), db.data_mut());
                let gd = g.data();
                for_each_pair(sa, sb, out.shape(), |o, i, j| {
                    let gv = gd[o];
                    match kind {
                        BinaryKind::Add => {
                            dad[i] += gv;
                            dbd[j] += gv;
                        }
                        BinaryKind::Sub => {
                            dad[i] += gv;
                            dbd[j] -= gv;
                        }
                        BinaryKind::Mul => {
                            dad[i] += gv * bd[j];
                            dbd[j] += gv * ad[i];
                        }
                    }
                });
            }
            grads.push((*a, da));
            grads.push((*b, db));
        }
        Op::Unary { x, kind } => {
            let xd = val(*x).data();
            let od = out.data();
            let gd = g.data();
            let dx = Tensor::from_fn(out.shape().to_vec(), |i| match kind {
                UnaryKind::Abs => {
                    if xd[i] > T::zero() {
                        gd[i]
                    } else if xd[i] < T::zero() {
                        -gd[i]
                    } else {
                        T::zero()
                    }
                }
                UnaryKind::Relu => {
                    if xd[i] > T::zero() {
                        gd[i]
                    } else {
                        T::zero()
                    }
                }
                UnaryKind::Sigmoid => gd[i] * od[i] * (T::one() - od[i]),
            });
            grads.push((*x, dx));
        }
        Op::Affine { x, mul } => {
            grads.push((*x, g.map(|v| v * *mul)));
        }
        Op::Concat { parts } => {
            let (b, c, h, w) = out.dims4()?;
            let hw = h * w;
            let mut offset = 0;
            for &p in parts {
                let pc = val(p).shape()[1];
                if wants(p) {
                    let mut d = Vec::with_capacity(b * pc * hw);
                    for bi in 0..b {
                        d.extend_from_slice(&g.data()[(bi * c + offset) * hw..][..pc * hw]);
                    }
                    grads.push((p, Tensor::from_vec(val(p).shape().to_vec(), d)?));
                }
                offset += pc;
            }
        }
        Op::ChannelMean { x } => {
            let (b, c, h, w) = val(*x).dims4()?;
            let hw = h * w;
            let inv = T::one() / T::from_f64(c as f64);
            let gd = g.data();
            let dx = Tensor::from_fn(vec![b, c, h, w], |i| {
                let bi = i / (c * hw);
                gd[bi * hw + i % hw] * inv
            });
            grads.push((*x, dx));
        }
        Op::Sum { x } => {
            grads.push((*x, Tensor::full(val(*x).shape().to_vec(), g.item())));
        }
        Op::Mean { x } => {
            let n = T::from_f64(val(*x).len() as f64);
            grads.push((*x, Tensor::full(val(*x).shape().to_vec(), g.item() / n)));
        }
        Op::Combine { terms } => {
            for &(v, w) in terms {
                grads.push((v, Tensor::full(val(v).shape().to_vec(), g.item() * w)));
            }
        }
        Op::WeightedBce {
            logits,
            target,
            weight,
        } => {
            let x = val(*logits);
            let items = x.shape().first().copied().unwrap_or(1).max(1);
            let n = x.len() / items;
            let scale = g.item() / T::from_f64(items as f64);
            let mut dx = Tensor::zeros(x.shape().to_vec());
            for b in 0..items {
                let den: T = match weight {
                    Some(w) => w.data()[b * n..][..n].iter().copied().sum(),
                    None => T::from_f64(n as f64),
                };
                for i in b * n..(b + 1) * n {
                    let w = weight.as_ref().map_or(T::one(), |w| w.data()[i]);
                    dx.data_mut()[i] = scale * w * (sigmoid(x.data()[i]) - target.data()[i]) / den;
                }
            }
            grads.push((*logits, dx));
        }
        Op::WeightedIou {
            logits,
            target,
            weight,
        } => {
            let x = val(*logits);
            let items = x.shape().first().copied().unwrap_or(1).max(1);
            let n = x.len() / items;
            let scale = g.item() / T::from_f64(items as f64);
            let mut dx = Tensor::zeros(x.shape().to_vec());
            for b in 0..items {
                let r = b * n..(b + 1) * n;
                let wslice = weight.as_ref().map(|w| &w.data()[r.clone()]);
                let (inter, union) = iou_sums(&x.data()[r.clone()], &target.data()[r.clone()], wslice);
                if union <= T::zero() {
                    continue;
                }
                let u2 = union * union;
                for i in r {
                    let p = sigmoid(x.data()[i]);
                    let t = target.data()[i];
                    let w = weight.as_ref().map_or(T::one(), |w| w.data()[i]);
                    let dp = -w * (t * union - inter * (T::one() - t)) / u2;
                    dx.data_mut()[i] = scale * dp * p * (T::one() - p);
                }
            }
            grads.push((*logits, dx));
        }
        Op::Dice {
            logits,
            target,
            eps,
        } => {
            let x = val(*logits);
            let items = x.shape().first().copied().unwrap_or(1).max(1);
            let n = x.len() / items;
            let scale = g.item() / T::from_f64(items as f64);
            let two = T::from_f64(2.0);
            let mut dx = Tensor::zeros(x.shape().to_vec());
            for b in 0..items {
                let r = b * n..(b + 1) * n;
                let (num, den) = dice_sums(&x.data()[r.clone()], &target.data()[r.clone()], *eps);
                for i in r {
                    let p = sigmoid(x.data()[i]);
                    let dp = -(two * target.data()[i] * den - num) / (den * den);
                    dx.data_mut()[i] = scale * dp * p * (T::one() - p);
                }
            }
            grads.push((*logits, dx));
        }
    }
    grads.retain(|(v, _)| wants(*v));
    Ok(grads)
}
