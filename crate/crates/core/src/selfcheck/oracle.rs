//! Direct loop implementations used as references. Nothing here shares code with the kernels.

use crate::kernels::Padding;
use crate::tensor::Tensor;

/// Source coordinate for a tap at `i` on an axis of length `n`.
pub fn pad_index(i: isize, n: usize, mode: Padding) -> Option<usize> {
    let n = n as isize;
    match mode {
        Padding::Zero => (0 <= i && i < n).then_some(i as usize),
        Padding::Replicate => Some(i.max(0).min(n - 1) as usize),
        Padding::Reflect => {
            if n == 1 {
                return Some(0);
            }
            let mut j = i;
            while j < 0 || j >= n {
                j = if j < 0 { -j } else { 2 * (n - 1) - j };
            }
            Some(j as usize)
        }
    }
}

fn at(x: &Tensor<f64>, b: usize, c: usize, y: usize, xx: usize) -> f64 {
    let s = x.shape();
    x.data()[((b * s[1] + c) * s[2] + y) * s[3] + xx]
}

/// Cross-correlation by six nested loops over output and taps.
pub fn conv2d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: Option<&Tensor<f64>>,
    stride: usize,
    padding: Padding,
    groups: usize,
) -> Tensor<f64> {
    let (b, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, cin_g, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(cin_g * groups, cin);
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let oh = (h - 1) / stride + 1;
    let ow = (wd - 1) / stride + 1;
    let cout_g = cout / groups;
    let mut out = vec![0.0; b * cout * oh * ow];
    for n in 0..b {
        for co in 0..cout {
            let g = co / cout_g;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |bt| bt.data()[co]);
                    for ci in 0..cin_g {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let sy = pad_index((oy * stride + ky) as isize - ph as isize, h, padding);
                                let sx = pad_index((ox * stride + kx) as isize - pw as isize, wd, padding);
                                if let (Some(sy), Some(sx)) = (sy, sx) {
                                    let wv = w.data()[((co * cin_g + ci) * kh + ky) * kw + kx];
                                    acc += wv * at(x, n, g * cin_g + ci, sy, sx);
                                }
                            }
                        }
                    }
                    out[((n * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::from_vec(vec![b, cout, oh, ow], out).expect("shape matches")
}

/// Per-channel horizontal sliding dot product, then vertical, both with replicate padding.
/// `wh` and `wv` hold one row of `k` taps per channel.
pub fn separable(x: &Tensor<f64>, wh: &[f64], wv: &[f64], k: usize) -> Tensor<f64> {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let r = (k / 2) as isize;
    let mut rows = vec![0.0; x.len()];
    for n in 0..b {
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for t in 0..k {
                        let sj = pad_index(j as isize + t as isize - r, w, Padding::Replicate).unwrap();
                        acc += wh[ch * k + t] * at(x, n, ch, i, sj);
                    }
                    rows[((n * c + ch) * h + i) * w + j] = acc;
                }
            }
        }
    }
    let mut out = vec![0.0; x.len()];
    for n in 0..b {
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for t in 0..k {
                        let si = pad_index(i as isize + t as isize - r, h, Padding::Replicate).unwrap();
                        acc += wv[ch * k + t] * rows[((n * c + ch) * h + si) * w + j];
                    }
                    out[((n * c + ch) * h + i) * w + j] = acc;
                }
            }
        }
    }
    Tensor::from_vec(x.shape().to_vec(), out).expect("shape matches")
}

/// Sliding-window max (zero-padded taps skipped) or average (divided by the full window area).
pub fn pool(x: &Tensor<f64>, max: bool, k: usize, stride: usize, padding: Padding) -> Tensor<f64> {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let p = (k / 2) as isize;
    let oh = (h - 1) / stride + 1;
    let ow = (w - 1) / stride + 1;
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for n in 0..b {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut sum = 0.0;
                    for dy in 0..k as isize {
                        for dx in 0..k as isize {
                            let sy = pad_index((oy * stride) as isize + dy - p, h, padding);
                            let sx = pad_index((ox * stride) as isize + dx - p, w, padding);
                            if let (Some(sy), Some(sx)) = (sy, sx) {
                                let v = at(x, n, ch, sy, sx);
                                best = best.max(v);
                                sum += v;
                            }
                        }
                    }
                    out.push(if max { best } else { sum / (k * k) as f64 });
                }
            }
        }
    }
    Tensor::from_vec(vec![b, c, oh, ow], out).expect("shape matches")
}

/// Bilinear resampling evaluated pixel by pixel from the half-pixel-center formula.
pub fn resize(x: &Tensor<f64>, oh: usize, ow: usize) -> Tensor<f64> {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let coord = |o: usize, out: usize, inp: usize| {
        let src = (o as f64 + 0.5) * inp as f64 / out as f64 - 0.5;
        let src = src.max(0.0).min((inp - 1) as f64);
        let lo = src as usize;
        (lo, (lo + 1).min(inp - 1), src - lo as f64)
    };
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for n in 0..b {
        for ch in 0..c {
            for oy in 0..oh {
                let (y0, y1, fy) = coord(oy, oh, h);
                for ox in 0..ow {
                    let (x0, x1, fx) = coord(ox, ow, w);
                    let top = at(x, n, ch, y0, x0) * (1.0 - fx) + at(x, n, ch, y0, x1) * fx;
                    let bottom = at(x, n, ch, y1, x0) * (1.0 - fx) + at(x, n, ch, y1, x1) * fx;
                    out.push(top * (1.0 - fy) + bottom * fy);
                }
            }
        }
    }
    Tensor::from_vec(vec![b, c, oh, ow], out).expect("shape matches")
}

/// Confusion counts at threshold `t` by visiting every pixel.
pub fn confusion(pred: &[f32], mask: &[f32], t: f64) -> (u64, u64, u64) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &m) in pred.iter().zip(mask) {
        let positive = p as f64 >= t;
        match (positive, m >= 0.5) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    (tp, fp, fn_)
}

/// Scalar AdamW with decoupled weight decay, run for `grads.len()` steps from `p0`.
pub fn adamw_scalar(p0: f64, grads: &[f64], lrs: &[f64], beta1: f64, beta2: f64, eps: f64, wd: f64) -> f64 {
    let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
    for (t, (&g, &lr)) in grads.iter().zip(lrs).enumerate() {
        let step = (t + 1) as i32;
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g * g;
        let mhat = m / (1.0 - beta1.powi(step));
        let vhat = v / (1.0 - beta2.powi(step));
        p -= lr * wd * p;
        p -= lr * mhat / (vhat.sqrt() + eps);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_mirrors_without_repeating_the_edge() {
        let got: Vec<usize> = (-3..7).map(|i| pad_index(i, 4, Padding::Reflect).unwrap()).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn resize_of_two_by_two_hand_values() {
        let x = Tensor::from_vec(vec![1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = resize(&x, 4, 4);
        assert_eq!(&y.data()[..4], &[0.0, 0.25, 0.75, 1.0]);
        assert_eq!(y.data()[5], 0.75);
    }
}
