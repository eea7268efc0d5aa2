//! Batch and group normalization kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    /// Statistics per channel across the batch and spatial axes.
    Batch,
    /// Statistics per sample over groups of consecutive channels.
    Group(usize),
}

/// Group count used by every group-norm layer: 8 when there are at least 8 channels, else 1.
pub fn default_groups(channels: usize) -> usize {
    if channels >= 8 && channels.is_multiple_of(8) {
        8
    } else {
        1
    }
}

/// Forward state retained for the backward pass.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    pub xhat: Vec<T>,
    /// One entry per normalization group.
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased variance per group.
    pub var: Vec<T>,
    /// True when the statistics came from the input itself rather than stored running values.
    pub batch_stats: bool,
}

struct Layout {
    b: usize,
    c: usize,
    hw: usize,
}

impl Layout {
    fn of(shape: &[usize]) -> Result<Self> {
        match *shape {
            [b, c, h, w] => Ok(Self { b, c, hw: h * w }),
            [b, c] => Ok(Self { b, c, hw: 1 }),
            _ => Err(Error::config(format!(
                "normalization expects a rank-2 or rank-4 input, got {shape:?}"
            ))),
        }
    }

    fn groups(&self, kind: NormKind) -> usize {
        match kind {
            NormKind::Batch => self.c,
            NormKind::Group(g) => self.b * g,
        }
    }

    /// Calls `f(group, start, len)` for each contiguous run of elements.
    fn for_each_run(&self, kind: NormKind, mut f: impl FnMut(usize, usize, usize)) {
        match kind {
            NormKind::Batch => {
                for b in 0..self.b {
                    for c in 0..self.c {
                        f(c, (b * self.c + c) * self.hw, self.hw);
                    }
                }
            }
            NormKind::Group(g) => {
                let per = self.c / g * self.hw;
                for b in 0..self.b {
                    for gi in 0..g {
                        f(b * g + gi, (b * g + gi) * per, per);
                    }
                }
            }
        }
    }
}

fn validate(shape: &[usize], kind: NormKind, eps: f64, params: usize) -> Result<Layout> {
    let layout = Layout::of(shape)?;
    if let NormKind::Group(g) = kind {
        if g == 0 || layout.c % g != 0 {
            return Err(Error::config(format!(
                "group norm: {g} groups do not divide {} channels",
                layout.c
            )));
        }
    }
    if eps <= 0.0 {
        return Err(Error::config("normalization eps must be positive"));
    }
    if params != layout.c {
        return Err(Error::config(format!(
            "normalization scale/shift have {params} entries for {} channels",
            layout.c
        )));
    }
    Ok(layout)
}

/// Normalizes `x`, then applies per-channel `scale` and `shift`.
///
/// With `running = Some((mean, var))` (batch kind only) the stored statistics are used and the
/// result is an affine map of the input.
pub fn normalize<T: Scalar>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    kind: NormKind,
    eps: f64,
    running: Option<(&[T], &[T])>,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let layout = validate(x.shape(), kind, eps, scale.len())?;
    if running.is_some() && kind != NormKind::Batch {
        return Err(Error::config("running statistics only apply to batch norm"));
    }
    let groups = layout.groups(kind);
    let xd = x.data();
    let (mean, var, batch_stats) = match running {
        Some((m, v)) => {
            if m.len() != groups || v.len() != groups {
                return Err(Error::config("running statistics length mismatch"));
            }
            (m.to_vec(), v.to_vec(), false)
        }
        None => {
            let mut sum = vec![0.0f64; groups];
            let mut count = vec![0usize; groups];
            layout.for_each_run(kind, |g, start, len| {
                sum[g] += xd[start..start + len].iter().map(|v| v.to_f64()).sum::<f64>();
                count[g] += len;
            });
            let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
            let mut sq = vec![0.0f64; groups];
            layout.for_each_run(kind, |g, start, len| {
                sq[g] += xd[start..start + len]
                    .iter()
                    .map(|v| (v.to_f64() - mean[g]).powi(2))
                    .sum::<f64>();
            });
            let var = sq.iter().zip(&count).map(|(s, &n)| T::from_f64(s / n as f64)).collect();
            (mean.into_iter().map(T::from_f64).collect(), var, true)
        }
    };
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::one() / (v + T::from_f64(eps)).sqrt())
        .collect();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut y = Tensor::zeros(x.shape().to_vec());
    let (sd, bd) = (scale.data(), shift.data());
    let yd = y.data_mut();
    layout.for_each_run(kind, |g, start, len| {
        for i in start..start + len {
            let ch = (i / layout.hw) % layout.c;
            let xh = (xd[i] - mean[g]) * inv_std[g];
            xhat[i] = xh;
            yd[i] = sd[ch] * xh + bd[ch];
        }
    });
    Ok((
        y,
        NormCache {
            xhat,
            inv_std,
            mean,
            var,
            batch_stats,
        },
    ))
}

/// Returns `(dx, dscale, dshift)`.
pub fn normalize_backward<T: Scalar>(
    shape: &[usize],
    dy: &Tensor<T>,
    scale: &Tensor<T>,
    kind: NormKind,
    cache: &NormCache<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let layout = Layout::of(shape)?;
    let groups = layout.groups(kind);
    let g = dy.data();
    let sd = scale.data();
    let mut dscale = vec![T::zero(); layout.c];
    let mut dshift = vec![T::zero(); layout.c];
    for (i, (&gv, &xh)) in g.iter().zip(&cache.xhat).enumerate() {
        let ch = (i / layout.hw) % layout.c;
        dscale[ch] += gv * xh;
        dshift[ch] += gv;
    }
    let mut dx = Tensor::zeros(shape.to_vec());
    let dxd = dx.data_mut();
    if cache.batch_stats {
        let mut sum_d = vec![T::zero(); groups];
        let mut sum_dx = vec![T::zero(); groups];
        let mut count = vec![0usize; groups];
        layout.for_each_run(kind, |gi, start, len| {
            for i in start..start + len {
                let d = g[i] * sd[(i / layout.hw) % layout.c];
                sum_d[gi] += d;
                sum_dx[gi] += d * cache.xhat[i];
            }
            count[gi] += len;
        });
        layout.for_each_run(kind, |gi, start, len| {
            let n = T::from_f64(count[gi] as f64);
            let (md, mdx) = (sum_d[gi] / n, sum_dx[gi] / n);
            for i in start..start + len {
                let d = g[i] * sd[(i / layout.hw) % layout.c];
                dxd[i] = cache.inv_std[gi] * (d - md - cache.xhat[i] * mdx);
            }
        });
    } else {
        layout.for_each_run(kind, |gi, start, len| {
            for i in start..start + len {
                dxd[i] = g[i] * sd[(i / layout.hw) % layout.c] * cache.inv_std[gi];
            }
        });
    }
    Ok((
        dx,
        Tensor::from_vec(vec![layout.c], dscale)?,
        Tensor::from_vec(vec![layout.c], dshift)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_channel_group_norm_zeroes_constant_channel() {
        let x = Tensor::<f32>::full(vec![1, 4, 3, 3], 5.0);
        let (y, _) = normalize(&x, &Tensor::ones(vec![4]), &Tensor::zeros(vec![4]), NormKind::Group(4), 1e-5, None).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn group_count_must_divide_channels() {
        let x = Tensor::<f32>::zeros(vec![1, 6, 2, 2]);
        let r = normalize(&x, &Tensor::ones(vec![6]), &Tensor::zeros(vec![6]), NormKind::Group(4), 1e-5, None);
        assert!(r.is_err());
    }

    #[test]
    fn default_group_rule() {
        assert_eq!(default_groups(64), 8);
        assert_eq!(default_groups(8), 8);
        assert_eq!(default_groups(3), 1);
        assert_eq!(default_groups(1), 1);
    }
}
