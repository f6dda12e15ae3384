//! Seeded random streams.
//!
//! Every stream is a ChaCha8 keystream: the 64-bit seed is expanded into the
//! 256-bit key by `rand_core`'s PCG32-based `seed_from_u64`, and the ChaCha
//! stream id (nonce) selects independent substreams. ChaCha is counter-based
//! and specified bit-for-bit, so a `(seed, stream)` pair yields the same
//! sequence on every platform.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::numkit::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::stream(seed, 0)
    }

    /// Independent substream `stream` of `seed`.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal_tensor<R: Real>(&mut self, dims: &[usize], std: f64) -> Tensor<R> {
        let n = dims.iter().product();
        let data = (0..n).map(|_| R::of(self.normal() * std)).collect();
        Tensor::from_vec(dims, data)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}
