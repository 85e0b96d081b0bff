//! Seed plumbing. A run has one root seed; every consumer derives its own
//! stream from it by label so components can be varied independently.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::real::Real;
use crate::tensor::Tensor;

pub type RunRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed of `root` for the stream named `label`.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    // FNV-1a over the label, then mixed with the root
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(root) ^ h)
}

pub fn rng_from_seed(seed: u64) -> RunRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(root: u64, label: &str) -> RunRng {
    rng_from_seed(derive_seed(root, label))
}

/// Uniform in ±sqrt(1/fan_in).
pub fn uniform_fan_in<F: Real>(rng: &mut RunRng, shape: &[usize], fan_in: usize) -> Tensor<F> {
    uniform_bound(rng, shape, (1.0 / fan_in.max(1) as f64).sqrt())
}

/// Uniform in ±sqrt(6/fan_in), variance-preserving ahead of a ReLU.
pub fn he_uniform<F: Real>(rng: &mut RunRng, shape: &[usize], fan_in: usize) -> Tensor<F> {
    uniform_bound(rng, shape, (6.0 / fan_in.max(1) as f64).sqrt())
}

fn uniform_bound<F: Real>(rng: &mut RunRng, shape: &[usize], bound: f64) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| F::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("finite init")
}
