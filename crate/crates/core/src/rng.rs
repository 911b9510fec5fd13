//! Portable random streams for instance generation.
//!
//! The generator is SplitMix64 used as a counter-based function: the `i`-th
//! output (0-based) of stream `key` is `mix(key + (i + 1)·0x9E3779B97F4A7C15)`
//! with wrapping arithmetic and `mix` the SplitMix64 finalizer. Normal variates
//! use the Box–Muller cosine branch and consume exactly two outputs each, so
//! a stream can be reproduced in any language from this description alone.

/// Identifier of the stream algorithm that CSI1 version 1 files were made with.
pub const ALGORITHM_ID: &str = "splitmix64-ctr/box-muller-cos/v1";

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Debug)]
pub struct SplitMix64 {
    key: u64,
    counter: u64,
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SplitMix64 {
    pub fn new(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    /// Output at an absolute position of the stream, independent of state.
    #[inline]
    pub fn at(key: u64, index: u64) -> u64 {
        mix(key.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = Self::at(self.key, self.counter);
        self.counter = self.counter.wrapping_add(1);
        v
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `(0, 1]`.
    #[inline]
    fn next_f64_open_low(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box–Muller, cosine branch only.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_f64_open_low();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `[0, bound)` by rejection, without modulo bias.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "empty range");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let v = self.next_u64();
            if v >= threshold {
                return v % bound;
            }
        }
    }

    pub fn position(&self) -> u64 {
        self.counter
    }
}
