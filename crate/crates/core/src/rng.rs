//! Seeded random streams.
//!
//! A stream is ChaCha8 keyed by the 64-bit seed (expanded with the
//! `rand_core` SplitMix64 routine of `seed_from_u64`) with the 64-bit stream id
//! written into ChaCha's stream word. ChaCha is counter based, so a
//! `(seed, stream)` pair yields the same sequence on every platform
//! regardless of which thread consumes it.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::dense::DenseArray;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh, independent stream sharing this seed.
    pub fn fork(&self, stream: u64) -> Self {
        Self::new(self.seed, stream)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        Uniform::new(0, n).expect("below() needs a non-empty range").sample(&mut self.inner)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// An `n × d` batch of independent standard normals.
    pub fn normal_batch(&mut self, n: usize, d: usize) -> DenseArray {
        let data = (0..n * d).map(|_| self.normal()).collect();
        DenseArray::matrix(n, d, data)
    }

    /// `count` indices drawn uniformly with replacement from `0..n`.
    pub fn indices(&mut self, n: usize, count: usize) -> alloc::vec::Vec<usize> {
        (0..count).map(|_| self.below(n)).collect()
    }
}
