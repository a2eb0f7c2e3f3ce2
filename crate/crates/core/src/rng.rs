//! Seeded randomness.
//!
//! Every stochastic step in the pipeline draws from a [`Rng`] derived from one
//! master seed. Independent consumers (epochs, layers, attack trials) get their
//! own stream through [`Rng::derive`], which hashes the parent seed together
//! with a label and a list of indices into a fresh 256-bit ChaCha key.

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct Rng {
    key: [u8; 32],
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::from_key(key_for(&seed.to_le_bytes(), "root", &[]))
    }

    fn from_key(key: [u8; 32]) -> Self {
        Rng {
            key,
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    /// Independent sub-stream for `label` and `indices`; does not advance `self`.
    pub fn derive(&self, label: &str, indices: &[u64]) -> Rng {
        Rng::from_key(key_for(&self.key, label, indices))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.inner.random::<f32>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut self.inner);
        idx
    }

    /// `amount` distinct values from `0..n`, in sampling order.
    pub fn sample_distinct(&mut self, n: usize, amount: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, amount).into_vec()
    }
}

fn key_for(parent: &[u8], label: &str, indices: &[u64]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((parent.len() as u64).to_le_bytes());
    h.update(parent);
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    for i in indices {
        h.update(i.to_le_bytes());
    }
    h.finalize().into()
}
