//! Seeded random streams.
//!
//! Every stochastic routine draws from [`SeededStream`], a `xoshiro256++`
//! generator (rand_xoshiro 0.7, seeded through SplitMix64) with Gaussian
//! variates produced by the Box-Muller transform. Given the same seed and
//! generator version the stream is reproducible bit for bit, which is what
//! lets ensemble results be re-derived in any language.
//!
//! Box-Muller, exactly as implemented:
//!
//! ```text
//! u1 = 1 - (next_u64 >> 11) * 2^-53        // in (0, 1]
//! u2 =     (next_u64 >> 11) * 2^-53        // in [0, 1)
//! r  = sqrt(-2 ln u1)
//! z0 = r cos(2π u2), z1 = r sin(2π u2)     // z0 returned first, z1 cached
//! ```

use std::f64::consts::TAU;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};

/// Name and version of the generator, recorded in run artifacts.
pub const GENERATOR: &str = "xoshiro256++/splitmix64-seeded/box-muller v1";

/// The standard SplitMix64 output for input `x`: the first draw of a
/// SplitMix64 stream whose state starts at `x`.
pub fn splitmix64(x: u64) -> u64 {
    SplitMix64::seed_from_u64(x).next_u64()
}

/// Seed of trial `index` under `master`: `master ⊕ splitmix64(index)`.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    master ^ splitmix64(index)
}

#[derive(Debug, Clone)]
pub struct SeededStream {
    rng: Xoshiro256PlusPlus,
    spare: Option<f64>,
}

impl SeededStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Lemire's multiply-shift; bias is below 2^-32 for the sizes used here.
        ((self.rng.next_u64() >> 32) * n as u64 >> 32) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal variate.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
