//! Deterministic fixtures shared by the benchmarks.

use dss_core::data::{batch, synth_split, Difficulty, Split, SynthConfig};
use dss_core::{Result, Tensor};

/// Values in [-1, 1) from a fixed linear congruential sequence.
pub fn filled(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Tensor::from_fn(shape.to_vec(), |_| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
    })
}

/// A batch of `n` easy synthetic scenes at `size x size`.
pub fn scene_batch(n: usize, size: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let samples = synth_split(7, Split::Train, n, size, Difficulty::Easy, &SynthConfig::default())?;
    batch(&samples.iter().collect::<Vec<_>>())
}
