//! Seeded pseudo-random helpers. Every stochastic path in the crate goes
//! through [`Seeded`] so runs are reproducible from a single `u64`.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

pub struct Seeded(ChaCha8Rng);

impl Seeded {
    pub fn new(seed: u64) -> Self {
        Seeded(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Independent stream derived from `seed` and a label, e.g. a parameter name.
    pub fn derived(seed: u64, label: &str) -> Self {
        Seeded::new(mix(seed, label))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.gen_range(lo..hi)
    }

    /// Tensor with entries drawn from `uniform(-scale, scale)`.
    pub fn tensor(&mut self, shape: &[usize], scale: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.uniform(-scale, scale)).collect();
        Tensor::new(shape.to_vec(), data).expect("non-empty shape")
    }

    pub fn usize(&mut self, below: usize) -> usize {
        self.0.gen_range(0..below)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.gen()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.0);
    }

    pub fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.0
    }
}

/// FNV-1a over the label, folded into the seed with a splitmix64 finalizer.
pub fn mix(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(seed ^ h)
}

pub fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
