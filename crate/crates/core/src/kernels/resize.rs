//! Bilinear resampling with half-pixel centers (no corner alignment).

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Interpolation taps for one destination coordinate along an axis.
#[derive(Clone, Copy, Debug)]
struct Tap<T> {
    lo: usize,
    hi: usize,
    frac: T,
}

fn axis_taps<T: Scalar>(src: usize, dst: usize) -> Vec<Tap<T>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let pos = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            Tap {
                lo,
                hi,
                frac: T::from_f64(pos - lo as f64),
            }
        })
        .collect()
}

fn check(x: &[usize], out_h: usize, out_w: usize) -> Result<(usize, usize, usize, usize)> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::config(format!(
            "bilinear resize target {out_h}x{out_w} has a zero extent"
        )));
    }
    match *x {
        [b, c, h, w] if h > 0 && w > 0 => Ok((b, c, h, w)),
        _ => Err(Error::config(format!(
            "bilinear resize needs a rank-4 input with non-empty extents, got {x:?}"
        ))),
    }
}

pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = check(x.shape(), out_h, out_w)?;
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let ys = axis_taps::<T>(h, out_h);
    let xs = axis_taps::<T>(w, out_w);
    let mut out = Tensor::zeros(vec![b, c, out_h, out_w]);
    let one = T::one();
    for (plane, dst) in x
        .data()
        .chunks(h * w)
        .zip(out.data_mut().chunks_mut(out_h * out_w))
    {
        for (oy, ty) in ys.iter().enumerate() {
            let r0 = &plane[ty.lo * w..][..w];
            let r1 = &plane[ty.hi * w..][..w];
            for (ox, tx) in xs.iter().enumerate() {
                let top = r0[tx.lo] * (one - tx.frac) + r0[tx.hi] * tx.frac;
                let bot = r1[tx.lo] * (one - tx.frac) + r1[tx.hi] * tx.frac;
                dst[oy * out_w + ox] = top * (one - ty.frac) + bot * ty.frac;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`resize_bilinear`]: scatters `dy` back onto the source grid.
pub fn resize_bilinear_backward<T: Scalar>(
    in_shape: &[usize],
    dy: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (_, _, out_h, out_w) = dy.dims4()?;
    let (b, c, h, w) = check(in_shape, out_h, out_w)?;
    if (h, w) == (out_h, out_w) {
        return Ok(dy.clone());
    }
    let ys = axis_taps::<T>(h, out_h);
    let xs = axis_taps::<T>(w, out_w);
    let mut dx = Tensor::zeros(vec![b, c, h, w]);
    let one = T::one();
    for (g, plane) in dy
        .data()
        .chunks(out_h * out_w)
        .zip(dx.data_mut().chunks_mut(h * w))
    {
        for (oy, ty) in ys.iter().enumerate() {
            for (ox, tx) in xs.iter().enumerate() {
                let v = g[oy * out_w + ox];
                let top = v * (one - ty.frac);
                let bot = v * ty.frac;
                plane[ty.lo * w + tx.lo] += top * (one - tx.frac);
                plane[ty.lo * w + tx.hi] += top * tx.frac;
                plane[ty.hi * w + tx.lo] += bot * (one - tx.frac);
                plane[ty.hi * w + tx.hi] += bot * tx.frac;
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_stays_constant() {
        let x = Tensor::<f64>::full(vec![1, 2, 3, 5], 0.75);
        let y = resize_bilinear(&x, 7, 4).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.75).abs() < 1e-15));
    }

    #[test]
    fn single_pixel_source_broadcasts() {
        let x = Tensor::<f32>::full(vec![1, 1, 1, 1], 3.5);
        let y = resize_bilinear(&x, 7, 7).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn same_size_is_exact_pass_through() {
        let x = Tensor::<f32>::from_fn(vec![2, 3, 4, 6], |i| (i as f32).sin());
        assert_eq!(resize_bilinear(&x, 4, 6).unwrap(), x);
    }

    #[test]
    fn zero_target_is_rejected() {
        let x = Tensor::<f32>::zeros(vec![1, 1, 2, 2]);
        assert!(matches!(resize_bilinear(&x, 0, 2), Err(Error::Config(_))));
    }
}
