//! Same-rank broadcasting for binary elementwise operations.

use crate::error::{Error, Result};

/// Output extents when every axis of `a` and `b` is either equal or one.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::config(format!(
            "cannot broadcast shapes {a:?} and {b:?} of different rank"
        )));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, y) => Ok(y),
            (x, 1) => Ok(x),
            _ => Err(Error::config(format!("cannot broadcast shapes {a:?} and {b:?}"))),
        })
        .collect()
}

/// Element strides of `shape` laid over `out`, with zero stride on broadcast axes.
fn strides_over(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for ax in (0..shape.len()).rev() {
        strides[ax] = if shape[ax] == 1 && out[ax] != 1 { 0 } else { acc };
        acc *= shape[ax];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` for every output element in row-major order.
pub(crate) fn for_each_pair(a: &[usize], b: &[usize], out: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let total: usize = out.iter().product();
    if a == out && b == out {
        (0..total).for_each(|i| f(i, i, i));
        return;
    }
    let sa = strides_over(a, out);
    let sb = strides_over(b, out);
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..total {
        f(o, ia, ib);
        // Odometer increment over the output index.
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            ia += sa[ax];
            ib += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            ia -= sa[ax] * out[ax];
            ib -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_one_broadcasts_against_channel_c() {
        assert_eq!(broadcast_shape(&[2, 1, 3, 3], &[2, 4, 3, 3]).unwrap(), vec![2, 4, 3, 3]);
        assert!(broadcast_shape(&[2, 2, 3, 3], &[2, 4, 3, 3]).is_err());
        assert!(broadcast_shape(&[2, 3], &[2, 3, 1]).is_err());
    }

    #[test]
    fn pair_indices_follow_broadcast_axes() {
        let mut seen = Vec::new();
        for_each_pair(&[1, 2], &[3, 1], &[3, 2], |o, a, b| seen.push((o, a, b)));
        assert_eq!(seen, vec![(0, 0, 0), (1, 1, 0), (2, 0, 1), (3, 1, 1), (4, 0, 2), (5, 1, 2)]);
    }
}
