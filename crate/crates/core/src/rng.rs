//! Keyed random streams.
//!
//! Every random draw in the crate comes from a [`RngStream`], a value that
//! names a position in a tree of independent streams: a 64-bit seed plus an
//! `(iteration, replicate, purpose)` identifier. The identifier is hashed into
//! the 256-bit key of a ChaCha8 generator, so any stream can be regenerated
//! from its key alone without replaying earlier draws. That is what lets Monte
//! Carlo replicates fan out over a thread pool and still produce bitwise
//! identical results.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// What a stream is used for. Forking with a different purpose gives a
/// stream that is independent of its parent and of its siblings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    Gradient,
    Coupling,
    Coordinate,
    SecondDraw,
    Loss,
    VarianceProbe,
    Init,
    Data,
    Noise,
    Trial,
    Audit,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Gradient => 0x4752_4144,
            Purpose::Coupling => 0x434f_5550,
            Purpose::Coordinate => 0x434f_4f52,
            Purpose::SecondDraw => 0x5345_434f,
            Purpose::Loss => 0x4c4f_5353,
            Purpose::VarianceProbe => 0x5641_5249,
            Purpose::Init => 0x494e_4954,
            Purpose::Data => 0x4441_5441,
            Purpose::Noise => 0x4e4f_4953,
            Purpose::Trial => 0x5452_4941,
            Purpose::Audit => 0x4155_4449,
        }
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn mix(a: u64, b: u64) -> u64 {
    splitmix64(a ^ splitmix64(b))
}

/// Identifier of one independent random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub iteration: u64,
    pub replicate: u64,
    purpose: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            iteration: 0,
            replicate: 0,
            purpose: Purpose::Gradient.tag(),
        }
    }

    pub fn with_iteration(self, iteration: u64) -> Self {
        Self { iteration, ..self }
    }

    pub fn with_replicate(self, replicate: u64) -> Self {
        Self { replicate, ..self }
    }

    /// Replaces the purpose outright.
    pub fn with_purpose(self, purpose: Purpose) -> Self {
        Self {
            purpose: purpose.tag(),
            ..self
        }
    }

    /// Child stream: the purpose is chained onto the current one, so forks
    /// taken from different parents never collide.
    pub fn fork(self, purpose: Purpose) -> Self {
        Self {
            purpose: mix(self.purpose, purpose.tag()),
            ..self
        }
    }

    /// Independent root for the `trial`-th repetition of an experiment.
    pub fn for_trial(self, trial: u64) -> Self {
        Self {
            seed: mix(self.seed, mix(Purpose::Trial.tag(), trial)),
            ..self
        }
    }

    fn key(&self) -> [u8; 32] {
        let mut words = [0u64; 4];
        let mut h = splitmix64(self.seed);
        for (slot, v) in words
            .iter_mut()
            .zip([self.iteration, self.replicate, self.purpose, 0x5354_5245_414d])
        {
            h = mix(h, v);
            *slot = h;
        }
        let mut key = [0u8; 32];
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        key
    }

    pub fn generator(&self) -> StreamRng {
        StreamRng {
            inner: ChaCha8Rng::from_seed(self.key()),
        }
    }
}

const UNIT: f64 = 1.0 / (1u64 << 53) as f64;

/// Generator for a single stream.
#[derive(Clone, Debug)]
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    /// Uniform on the grid `{k / 2^53 : 1 <= k <= 2^53 - 1}`, i.e. within
    /// `[2^-53, 1 - 2^-53]`. Exact 0 and 1 never occur.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        let k = (self.inner.next_u64() >> 11).max(1);
        k as f64 * UNIT
    }

    /// Uniform index in `0..n`.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    #[inline]
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
}
