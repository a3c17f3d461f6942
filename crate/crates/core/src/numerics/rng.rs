//! Seeded randomness.
//!
//! Uniforms come from ChaCha8 keyed by a 64-bit seed; normals use the
//! Box-Muller transform (both outputs of each pair are consumed). Independent
//! streams are derived by folding a key path into the seed with SplitMix64,
//! so a stream depends only on `(seed, key...)` and never on call order.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::numerics::DenseVector;

/// Source of standard-normal draws.
///
/// Implemented by [`SeededRng`] and by [`FixedNoise`], which replays
/// prescribed values so tests can force ε.
pub trait NoiseSource {
    fn standard_normal(&mut self) -> f64;

    fn standard_normal_vec(&mut self, len: usize) -> DenseVector {
        (0..len).map(|_| self.standard_normal()).collect()
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over UTF-8 bytes; maps string ids onto stream keys.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Independent stream for `(seed, key[0], key[1], ...)`.
    pub fn stream(seed: u64, key: &[u64]) -> Self {
        let mut s = splitmix64(seed);
        for &k in key {
            s = splitmix64(s ^ splitmix64(k));
        }
        SeededRng::new(s)
    }

    /// Child stream derived from this generator's seed (not its state).
    pub fn fork(&self, key: &[u64]) -> Self {
        SeededRng::stream(self.seed, key)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        // Rejection keeps the draw unbiased.
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl NoiseSource for SeededRng {
    fn standard_normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        // u1 in (0, 1] so ln(u1) is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// Replays a fixed sequence of noise values, cycling when exhausted.
#[derive(Debug, Clone)]
pub struct FixedNoise {
    values: Vec<f64>,
    pos: usize,
}

impl FixedNoise {
    pub fn new(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "FixedNoise needs at least one value");
        FixedNoise { values, pos: 0 }
    }

    pub fn zeros() -> Self {
        FixedNoise::new(vec![0.0])
    }
}

impl NoiseSource for FixedNoise {
    fn standard_normal(&mut self) -> f64 {
        let v = self.values[self.pos % self.values.len()];
        self.pos += 1;
        v
    }
}
