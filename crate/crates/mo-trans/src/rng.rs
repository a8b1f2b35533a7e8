//! Deterministic random stream used by every stochastic component.
//!
//! A thin newtype over a seedable counter-based generator so that (a) the
//! whole artifact depends on one named stream type, (b) streams can be
//! snapshotted into checkpoints and restored bit-exactly, and (c) call sites
//! read as sampling intent (`below`, `coin`, `pick`) rather than generator
//! plumbing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Serialized form of an [`RngStream`]: the 32-byte seed as hex plus the
/// stream position. Both are strings so the checkpoint JSON stays portable
/// (the position is a 128-bit counter).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub word_pos: String,
}

#[derive(Debug, Error)]
pub enum RngStateError {
    #[error("malformed rng seed {0:?}: expected 64 hex digits")]
    Seed(String),
    #[error("malformed rng position {0:?}")]
    Position(String),
}

/// Seedable deterministic pseudo-random source. Identical seed ⇒ identical
/// draw sequence, across runs and platforms.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn seed_from_u64(seed: u64) -> Self {
        Self { inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Uniform draw from `[0, 1)`.
    pub fn unit_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Bernoulli draw; `true` with probability `p`. Requires `p ∈ [0, 1]`.
    pub fn coin(&mut self, p: f64) -> bool {
        self.inner.random_bool(p)
    }

    /// Uniform draw from `0..n`. Requires `n > 0`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Uniform draw from `0..n` over the full 128-bit range. Requires `n > 0`.
    pub fn below_u128(&mut self, n: u128) -> u128 {
        self.inner.random_range(0..n)
    }

    /// Uniform draw from `lo..=hi`. Requires `lo ≤ hi`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..=hi)
    }

    /// Uniform choice from a non-empty slice.
    pub fn pick<'a, T>(&mut self, xs: &'a [T]) -> &'a T {
        &xs[self.below(xs.len())]
    }

    pub fn state(&self) -> RngState {
        let seed = self.inner.get_seed();
        let mut hex = String::with_capacity(64);
        for byte in seed {
            hex.push_str(&format!("{byte:02x}"));
        }
        RngState { seed: hex, word_pos: self.inner.get_word_pos().to_string() }
    }

    pub fn restore(state: &RngState) -> Result<Self, RngStateError> {
        let bad_seed = || RngStateError::Seed(state.seed.clone());
        if state.seed.len() != 64 {
            return Err(bad_seed());
        }
        let mut seed = [0u8; 32];
        for (i, chunk) in seed.iter_mut().enumerate() {
            *chunk =
                u8::from_str_radix(&state.seed[2 * i..2 * i + 2], 16).map_err(|_| bad_seed())?;
        }
        let word_pos: u128 =
            state.word_pos.parse().map_err(|_| RngStateError::Position(state.word_pos.clone()))?;
        let mut inner = ChaCha8Rng::from_seed(seed);
        inner.set_word_pos(word_pos);
        Ok(Self { inner })
    }
}
