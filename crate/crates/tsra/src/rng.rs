//! Seedable PRNG used everywhere randomness is needed.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood's `splitmix64` mixer):
//! a 64-bit counter advanced by the golden-ratio constant, finalized with
//! two xor-shift multiplies. It is trivial to reimplement bit-exactly in
//! any language, which is the point — every sampled value in this crate is
//! reproducible from a `u64` seed alone.
//!
//! Gaussian samples use the Box–Muller transform,
//! `z = sqrt(-2 ln(1 - u1)) * cos(2π u2)`, drawing exactly two uniforms per
//! sample (no cached spare, so the stream position stays predictable).

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: the output mix applied to the raw counter.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a stream index.
///
/// `derive_seed(s, i) = mix64(s + (i + 1) * GOLDEN_GAMMA)`; documented so the
/// per-scene / per-shard streams can be reproduced outside this crate.
#[inline]
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`. Uses the modulo reduction; the bias is
    /// below 2^-50 for every `n` used in this crate.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }

    /// Bernoulli draw with probability `p`.
    #[inline]
    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal sample via Box–Muller (cosine branch, two uniforms).
    #[inline]
    pub fn normal(&mut self) -> f64 {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Normal sample with standard deviation `sigma`.
    #[inline]
    pub fn normal_scaled(&mut self, sigma: f64) -> f64 {
        self.normal() * sigma
    }

    /// In-place Fisher–Yates shuffle (descending index, `j = below(i + 1)`).
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
