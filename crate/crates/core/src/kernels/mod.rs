//! Forward and backward numerical kernels on plain tensors.
//!
//! These functions know nothing about the computation graph; [`crate::autodiff`] records which
//! kernel produced a value and calls the matching backward kernel. Supervision targets reuse
//! the forward kernels directly.

pub mod conv;
pub mod norm;
pub mod pool;
pub mod resize;

use serde::{Deserialize, Serialize};

/// Border handling for same-size sliding-window operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Zero,
    Reflect,
    Replicate,
}

const OUTSIDE: usize = usize::MAX;

/// Maps a possibly out-of-range coordinate onto `0..n`, or `None` for zero padding.
pub fn source_index(i: isize, n: usize, mode: Padding) -> Option<usize> {
    if (0..n as isize).contains(&i) {
        return Some(i as usize);
    }
    match mode {
        Padding::Zero => None,
        Padding::Replicate => Some(i.clamp(0, n as isize - 1) as usize),
        Padding::Reflect => {
            if n == 1 {
                return Some(0);
            }
            // Mirror without repeating the edge sample; periodic with period 2(n - 1).
            let period = 2 * (n as isize - 1);
            let mut r = i.rem_euclid(period);
            if r >= n as isize {
                r = period - r;
            }
            Some(r as usize)
        }
    }
}

/// Output extent of a same-size window of odd size `k` with the given stride.
pub fn same_output_extent(n: usize, k: usize, stride: usize) -> usize {
    let pad = (k - 1) / 2;
    (n + 2 * pad - k) / stride + 1
}

/// Precomputed source coordinates for every (output position, kernel tap) pair along one axis.
#[derive(Clone, Debug)]
pub(crate) struct AxisMap {
    pub out: usize,
    pub taps: usize,
    table: Vec<usize>,
}

impl AxisMap {
    pub fn new(n: usize, k: usize, stride: usize, mode: Padding) -> Self {
        let out = same_output_extent(n, k, stride);
        let pad = ((k - 1) / 2) as isize;
        let mut table = Vec::with_capacity(out * k);
        for o in 0..out {
            for t in 0..k {
                let i = (o * stride) as isize + t as isize - pad;
                table.push(source_index(i, n, mode).unwrap_or(OUTSIDE));
            }
        }
        Self {
            out,
            taps: k,
            table,
        }
    }

    #[inline]
    pub fn get(&self, o: usize, t: usize) -> Option<usize> {
        let v = self.table[o * self.taps + t];
        (v != OUTSIDE).then_some(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_mirrors_without_edge_repeat() {
        let got: Vec<_> = (-3..8)
            .map(|i| source_index(i, 5, Padding::Reflect).unwrap())
            .collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
    }

    #[test]
    fn replicate_and_zero_borders() {
        assert_eq!(source_index(-2, 4, Padding::Replicate), Some(0));
        assert_eq!(source_index(9, 4, Padding::Replicate), Some(3));
        assert_eq!(source_index(-1, 4, Padding::Zero), None);
        assert_eq!(source_index(0, 1, Padding::Reflect), Some(0));
        assert_eq!(source_index(-7, 1, Padding::Reflect), Some(0));
    }

    #[test]
    fn stride_two_halves_even_extents() {
        assert_eq!(same_output_extent(96, 3, 2), 48);
        assert_eq!(same_output_extent(3, 3, 2), 2);
        assert_eq!(same_output_extent(24, 15, 1), 24);
    }
}
