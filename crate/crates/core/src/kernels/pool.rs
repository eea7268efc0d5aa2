//! Same-size max and average pooling.
//!
//! Max pooling ignores zero-padded taps and sends its gradient to the first row-major argmax.
//! Average pooling always divides by the full window area, so replicate or reflect padding keep
//! constant fields unchanged while zero padding darkens borders.

use serde::{Deserialize, Serialize};

use super::{AxisMap, Padding};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kind: PoolKind,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl PoolSpec {
    /// Stride-1 window that preserves spatial extents.
    pub fn same(kind: PoolKind, kernel: usize, padding: Padding) -> Self {
        Self {
            kind,
            kernel,
            stride: 1,
            padding,
        }
    }
}

fn maps(shape: &[usize], spec: &PoolSpec) -> Result<(usize, usize, usize, usize, AxisMap, AxisMap)> {
    let (b, c, h, w) = match *shape {
        [b, c, h, w] => (b, c, h, w),
        _ => return Err(Error::config(format!("pool2d input must be rank 4, got {shape:?}"))),
    };
    if spec.kernel == 0 || spec.kernel.is_multiple_of(2) {
        return Err(Error::config(format!(
            "pool2d kernel must be odd and at least 1, got {}",
            spec.kernel
        )));
    }
    if spec.stride == 0 {
        return Err(Error::config("pool2d stride must be at least 1"));
    }
    let rows = AxisMap::new(h, spec.kernel, spec.stride, spec.padding);
    let cols = AxisMap::new(w, spec.kernel, spec.stride, spec.padding);
    Ok((b, c, h, w, rows, cols))
}

/// Pooled values plus, for max pooling, the flat source index chosen for each output.
pub fn pool2d<T: Scalar>(x: &Tensor<T>, spec: &PoolSpec) -> Result<(Tensor<T>, Option<Vec<usize>>)> {
    let (b, c, h, w, rows, cols) = maps(x.shape(), spec)?;
    let (oh, ow) = (rows.out, cols.out);
    let k = spec.kernel;
    let area = T::from_f64((k * k) as f64);
    let mut out = Tensor::zeros(vec![b, c, oh, ow]);
    let mut argmax = (spec.kind == PoolKind::Max).then(|| vec![0usize; b * c * oh * ow]);
    let xd = x.data();
    for plane_idx in 0..b * c {
        let base = plane_idx * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let o = (plane_idx * oh + oy) * ow + ox;
                match spec.kind {
                    PoolKind::Avg => {
                        let mut acc = T::zero();
                        for ky in 0..k {
                            let Some(sy) = rows.get(oy, ky) else { continue };
                            for kx in 0..k {
                                if let Some(sx) = cols.get(ox, kx) {
                                    acc += xd[base + sy * w + sx];
                                }
                            }
                        }
                        out.data_mut()[o] = acc / area;
                    }
                    PoolKind::Max => {
                        let mut best: Option<(T, usize)> = None;
                        for ky in 0..k {
                            let Some(sy) = rows.get(oy, ky) else { continue };
                            for kx in 0..k {
                                if let Some(sx) = cols.get(ox, kx) {
                                    let idx = base + sy * w + sx;
                                    let v = xd[idx];
                                    if best.is_none_or(|(bv, _)| v > bv) {
                                        best = Some((v, idx));
                                    }
                                }
                            }
                        }
                        // The window always contains its own center, so it is never empty.
                        let (v, idx) = best.expect("pool window has a valid tap");
                        out.data_mut()[o] = v;
                        if let Some(a) = argmax.as_mut() {
                            a[o] = idx;
                        }
                    }
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn pool2d_backward<T: Scalar>(
    in_shape: &[usize],
    dy: &Tensor<T>,
    spec: &PoolSpec,
    argmax: Option<&[usize]>,
) -> Result<Tensor<T>> {
    let (b, c, h, w, rows, cols) = maps(in_shape, spec)?;
    let mut dx = Tensor::zeros(in_shape.to_vec());
    let g = dy.data();
    match spec.kind {
        PoolKind::Max => {
            let arg = argmax.ok_or_else(|| Error::Usage("max pool backward needs argmax".into()))?;
            for (o, &src) in arg.iter().enumerate() {
                dx.data_mut()[src] += g[o];
            }
        }
        PoolKind::Avg => {
            let (oh, ow, k) = (rows.out, cols.out, spec.kernel);
            let area = T::from_f64((k * k) as f64);
            for plane_idx in 0..b * c {
                let base = plane_idx * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let share = g[(plane_idx * oh + oy) * ow + ox] / area;
                        for ky in 0..k {
                            let Some(sy) = rows.get(oy, ky) else { continue };
                            for kx in 0..k {
                                if let Some(sx) = cols.get(ox, kx) {
                                    dx.data_mut()[base + sy * w + sx] += share;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_pool_spreads_single_spike() {
        let mut x = Tensor::<f64>::zeros(vec![1, 1, 7, 7]);
        x.set4(0, 0, 3, 3, 2.5);
        let (y, _) = pool2d(&x, &PoolSpec::same(PoolKind::Max, 3, Padding::Replicate)).unwrap();
        for r in 0..7 {
            for c in 0..7 {
                let near = (2..=4).contains(&r) && (2..=4).contains(&c);
                assert_eq!(y.at4(0, 0, r, c), if near { 2.5 } else { 0.0 });
            }
        }
    }

    #[test]
    fn avg_pool_replicate_keeps_constants() {
        let x = Tensor::<f32>::full(vec![2, 3, 6, 5], 0.3);
        let (y, _) = pool2d(&x, &PoolSpec::same(PoolKind::Avg, 5, Padding::Replicate)).unwrap();
        let (y, _) = pool2d(&y, &PoolSpec::same(PoolKind::Avg, 15, Padding::Replicate)).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn max_backward_picks_first_tie() {
        let x = Tensor::<f64>::ones(vec![1, 1, 1, 3]);
        let spec = PoolSpec::same(PoolKind::Max, 3, Padding::Zero);
        let (_, arg) = pool2d(&x, &spec).unwrap();
        assert_eq!(arg.as_deref(), Some(&[0, 0, 1][..]));
        let dx: Tensor<f64> = pool2d_backward(x.shape(), &Tensor::ones(vec![1, 1, 1, 3]), &spec, arg.as_deref()).unwrap();
        assert_eq!(dx.data(), &[2.0, 1.0, 0.0]);
    }
}
