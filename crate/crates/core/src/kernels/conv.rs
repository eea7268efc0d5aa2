//! 2-D cross-correlation with groups, stride, and same-size padding.
//!
//! Dense and grouped kernels lower to im2col + GEMM per (batch item, group). Depthwise kernels
//! (groups == in channels == out channels) run as direct loops, which is what the anisotropic
//! 1xk / kx1 operators need.

use serde::{Deserialize, Serialize};

use super::{AxisMap, Padding};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: Padding,
    pub groups: usize,
}

impl ConvSpec {
    pub fn same(padding: Padding) -> Self {
        Self {
            stride: 1,
            padding,
            groups: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self::same(Padding::Zero)
    }
}

#[derive(Clone, Debug)]
struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    groups: usize,
    rows: AxisMap,
    cols: AxisMap,
    stride: usize,
}

impl Geometry {
    fn new(x: &[usize], weight: &[usize], spec: &ConvSpec) -> Result<Self> {
        let (batch, cin, h, w) = match *x {
            [b, c, h, w] => (b, c, h, w),
            _ => return Err(Error::config(format!("conv2d input must be rank 4, got {x:?}"))),
        };
        let (cout, cig, kh, kw) = match *weight {
            [o, i, kh, kw] => (o, i, kh, kw),
            _ => {
                return Err(Error::config(format!(
                    "conv2d weight must be rank 4, got {weight:?}"
                )))
            }
        };
        let g = spec.groups;
        if g == 0 || cin % g != 0 || cout % g != 0 {
            return Err(Error::config(format!(
                "conv2d groups {g} must divide in channels {cin} and out channels {cout}"
            )));
        }
        if cig != cin / g {
            return Err(Error::config(format!(
                "conv2d weight expects {cig} channels per group, input provides {}",
                cin / g
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::config(format!(
                "conv2d same-size padding needs odd kernel extents, got {kh}x{kw}"
            )));
        }
        if spec.stride == 0 {
            return Err(Error::config("conv2d stride must be at least 1"));
        }
        if h == 0 || w == 0 {
            return Err(Error::config("conv2d input has an empty spatial extent"));
        }
        Ok(Self {
            batch,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            groups: g,
            rows: AxisMap::new(h, kh, spec.stride, spec.padding),
            cols: AxisMap::new(w, kw, spec.stride, spec.padding),
            stride: spec.stride,
        })
    }

    fn oh(&self) -> usize {
        self.rows.out
    }

    fn ow(&self) -> usize {
        self.cols.out
    }

    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    fn patch(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }

    fn is_depthwise(&self) -> bool {
        self.groups == self.cin && self.cout == self.cin && self.groups > 1
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    /// Lowers channels of group `g` of one batch item into a `(patch, oh*ow)` matrix.
    fn im2col<T: Scalar>(&self, x_item: &[T], g: usize, cols: &mut [T]) {
        let (oh, ow, hw) = (self.oh(), self.ow(), self.h * self.w);
        let p = oh * ow;
        for ci in 0..self.cin_g() {
            let plane = &x_item[(g * self.cin_g() + ci) * hw..][..hw];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * p..][..p];
                    for oy in 0..oh {
                        let line = &mut dst[oy * ow..][..ow];
                        match self.rows.get(oy, ky) {
                            None => line.fill(T::zero()),
                            Some(sy) => {
                                let src = &plane[sy * self.w..][..self.w];
                                for (ox, d) in line.iter_mut().enumerate() {
                                    *d = match self.cols.get(ox, kx) {
                                        Some(sx) => src[sx],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a `(patch, oh*ow)` matrix back onto group `g` of one batch item.
    fn col2im<T: Scalar>(&self, cols: &[T], g: usize, dx_item: &mut [T]) {
        let (oh, ow, hw) = (self.oh(), self.ow(), self.h * self.w);
        let p = oh * ow;
        for ci in 0..self.cin_g() {
            let plane = &mut dx_item[(g * self.cin_g() + ci) * hw..][..hw];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * p..][..p];
                    for oy in 0..oh {
                        let Some(sy) = self.rows.get(oy, ky) else {
                            continue;
                        };
                        let line = &src[oy * ow..][..ow];
                        for (ox, &v) in line.iter().enumerate() {
                            if let Some(sx) = self.cols.get(ox, kx) {
                                plane[sy * self.w + sx] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Output shape of `conv2d` without computing it.
pub fn output_shape(x: &[usize], weight: &[usize], spec: &ConvSpec) -> Result<[usize; 4]> {
    let g = Geometry::new(x, weight, spec)?;
    Ok([g.batch, g.cout, g.oh(), g.ow()])
}

pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let geo = Geometry::new(x.shape(), weight.shape(), spec)?;
    if let Some(b) = bias {
        if b.len() != geo.cout {
            return Err(Error::config(format!(
                "conv2d bias has {} entries for {} output channels",
                b.len(),
                geo.cout
            )));
        }
    }
    let (oh, ow) = (geo.oh(), geo.ow());
    let p = oh * ow;
    let mut out = Tensor::zeros(vec![geo.batch, geo.cout, oh, ow]);
    let in_item = geo.cin * geo.h * geo.w;
    let out_item = geo.cout * p;
    let xd = x.data();
    let wd = weight.data();

    if geo.is_depthwise() {
        depthwise_forward(&geo, xd, wd, out.data_mut());
    } else {
        let k = geo.patch();
        let mut cols = if geo.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); k * p]
        };
        for b in 0..geo.batch {
            let x_item = &xd[b * in_item..][..in_item];
            let y_item = &mut out.data_mut()[b * out_item..][..out_item];
            for g in 0..geo.groups {
                let w_g = &wd[g * geo.cout_g() * k..][..geo.cout_g() * k];
                let y_g = &mut y_item[g * geo.cout_g() * p..][..geo.cout_g() * p];
                let rhs: &[T] = if geo.is_pointwise() {
                    &x_item[g * geo.cin_g() * p..][..k * p]
                } else {
                    geo.im2col(x_item, g, &mut cols);
                    &cols
                };
                T::gemm(geo.cout_g(), k, p, T::one(), w_g, false, rhs, false, T::zero(), y_g);
            }
        }
    }

    if let Some(bias) = bias {
        let bd = bias.data();
        for (idx, plane) in out.data_mut().chunks_mut(p).enumerate() {
            let bv = bd[idx % geo.cout];
            plane.iter_mut().for_each(|v| *v += bv);
        }
    }
    Ok(out)
}

fn depthwise_forward<T: Scalar>(geo: &Geometry, x: &[T], w: &[T], y: &mut [T]) {
    let (oh, ow, hw) = (geo.oh(), geo.ow(), geo.h * geo.w);
    let taps = geo.kh * geo.kw;
    for b in 0..geo.batch {
        for c in 0..geo.cin {
            let plane = &x[(b * geo.cin + c) * hw..][..hw];
            let out = &mut y[(b * geo.cin + c) * oh * ow..][..oh * ow];
            let kernel = &w[c * taps..][..taps];
            for ky in 0..geo.kh {
                for kx in 0..geo.kw {
                    let wv = kernel[ky * geo.kw + kx];
                    for oy in 0..oh {
                        let Some(sy) = geo.rows.get(oy, ky) else {
                            continue;
                        };
                        let src = &plane[sy * geo.w..][..geo.w];
                        let dst = &mut out[oy * ow..][..ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            if let Some(sx) = geo.cols.get(ox, kx) {
                                *d += wv * src[sx];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_backward<T: Scalar>(
    geo: &Geometry,
    x: &[T],
    w: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let (oh, ow, hw) = (geo.oh(), geo.ow(), geo.h * geo.w);
    let taps = geo.kh * geo.kw;
    for b in 0..geo.batch {
        for c in 0..geo.cin {
            let plane_off = (b * geo.cin + c) * hw;
            let g = &dy[(b * geo.cin + c) * oh * ow..][..oh * ow];
            for ky in 0..geo.kh {
                for kx in 0..geo.kw {
                    let tap = c * taps + ky * geo.kw + kx;
                    let wv = w[tap];
                    let mut acc = T::zero();
                    for oy in 0..oh {
                        let Some(sy) = geo.rows.get(oy, ky) else {
                            continue;
                        };
                        let row_off = plane_off + sy * geo.w;
                        for ox in 0..ow {
                            if let Some(sx) = geo.cols.get(ox, kx) {
                                let gv = g[oy * ow + ox];
                                acc += gv * x[row_off + sx];
                                if let Some(dx) = dx.as_deref_mut() {
                                    dx[row_off + sx] += gv * wv;
                                }
                            }
                        }
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[tap] += acc;
                    }
                }
            }
        }
    }
}

/// Gradients of `conv2d` with respect to the input, weight, and bias.
pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    spec: &ConvSpec,
    need: (bool, bool, bool),
) -> Result<ConvGrads<T>> {
    let geo = Geometry::new(x.shape(), weight.shape(), spec)?;
    let (need_dx, need_dw, need_db) = need;
    let (oh, ow) = (geo.oh(), geo.ow());
    let p = oh * ow;
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape().to_vec()));
    let mut dw = need_dw.then(|| Tensor::zeros(weight.shape().to_vec()));
    let dyd = dy.data();

    let db = need_db.then(|| {
        let mut db = vec![T::zero(); geo.cout];
        for (idx, plane) in dyd.chunks(p).enumerate() {
            db[idx % geo.cout] += plane.iter().copied().sum::<T>();
        }
        Tensor::from_vec(vec![geo.cout], db).expect("bias gradient shape")
    });

    if geo.is_depthwise() {
        depthwise_backward(
            &geo,
            x.data(),
            weight.data(),
            dyd,
            dx.as_mut().map(|t| t.data_mut()),
            dw.as_mut().map(|t| t.data_mut()),
        );
        return Ok(ConvGrads { dx, dw, db });
    }

    let k = geo.patch();
    let in_item = geo.cin * geo.h * geo.w;
    let out_item = geo.cout * p;
    let mut cols = vec![T::zero(); k * p];
    let mut dcols = vec![T::zero(); k * p];
    let xd = x.data();
    let wd = weight.data();
    for b in 0..geo.batch {
        let x_item = &xd[b * in_item..][..in_item];
        let dy_item = &dyd[b * out_item..][..out_item];
        for g in 0..geo.groups {
            let cog = geo.cout_g();
            let dy_g = &dy_item[g * cog * p..][..cog * p];
            if let Some(dw) = dw.as_mut() {
                let rhs: &[T] = if geo.is_pointwise() {
                    &x_item[g * geo.cin_g() * p..][..k * p]
                } else {
                    geo.im2col(x_item, g, &mut cols);
                    &cols
                };
                let dw_g = &mut dw.data_mut()[g * cog * k..][..cog * k];
                T::gemm(cog, p, k, T::one(), dy_g, false, rhs, true, T::one(), dw_g);
            }
            if let Some(dx) = dx.as_mut() {
                let w_g = &wd[g * cog * k..][..cog * k];
                let dx_item = &mut dx.data_mut()[b * in_item..][..in_item];
                if geo.is_pointwise() {
                    let dst = &mut dx_item[g * geo.cin_g() * p..][..k * p];
                    T::gemm(k, cog, p, T::one(), w_g, true, dy_g, false, T::one(), dst);
                } else {
                    T::gemm(k, cog, p, T::one(), w_g, true, dy_g, false, T::zero(), &mut dcols);
                    geo.col2im(&dcols, g, dx_item);
                }
            }
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_pointwise_kernel_passes_input_through() {
        let x = Tensor::<f64>::from_fn(vec![2, 3, 4, 5], |i| i as f64 * 0.1 - 2.0);
        let w = Tensor::from_fn(vec![3, 3, 1, 1], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let y = conv2d(&x, &w, None, &ConvSpec::default()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_kernel_counts_neighbours() {
        let x = Tensor::<f64>::ones(vec![1, 1, 3, 3]);
        let w = Tensor::ones(vec![1, 1, 3, 3]);
        let y = conv2d(&x, &w, None, &ConvSpec::same(Padding::Zero)).unwrap();
        assert_eq!(y.at4(0, 0, 1, 1), 9.0);
        assert_eq!(y.at4(0, 0, 0, 0), 4.0);
        assert_eq!(y.at4(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn rejects_bad_groups_and_even_kernels() {
        let x = Tensor::<f32>::zeros(vec![1, 4, 5, 5]);
        let w = Tensor::zeros(vec![4, 2, 3, 3]);
        assert!(conv2d(&x, &w, None, &ConvSpec::default().with_groups(3)).is_err());
        let w = Tensor::zeros(vec![4, 4, 2, 2]);
        assert!(matches!(
            conv2d(&x, &w, None, &ConvSpec::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn stride_two_output_extent() {
        let shape = output_shape(&[1, 3, 96, 96], &[16, 3, 3, 3], &ConvSpec::default().with_stride(2)).unwrap();
        assert_eq!(shape, [1, 16, 48, 48]);
    }
}
