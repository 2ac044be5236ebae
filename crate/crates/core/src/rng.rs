//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, stream_id, counter)`, so a
//! particle's randomness does not depend on which worker thread touches it or
//! in which order. The mixing function is the SplitMix64 finalizer applied in
//! three nested rounds.

use crate::normal::fast_normal_quantile;
use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_MUL: u64 = 0xD1B5_4A32_D192_ED03;

#[inline(always)]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Pre-mixed seed, shared by every stream derived from the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedKey(u64);

impl SeedKey {
    pub fn new(seed: u64) -> Self {
        SeedKey(mix64(seed ^ GOLDEN))
    }

    /// Raw 64-bit output at `(stream_id, counter)`.
    #[inline(always)]
    pub fn bits(self, stream_id: u64, counter: u64) -> u64 {
        let c = mix64(counter.wrapping_add(GOLDEN));
        mix64(self.0 ^ mix64(stream_id.wrapping_mul(STREAM_MUL) ^ c))
    }

    /// Uniform on the open interval (0, 1).
    #[inline(always)]
    pub fn uniform(self, stream_id: u64, counter: u64) -> f64 {
        bits_to_open_unit(self.bits(stream_id, counter))
    }

    /// Standard normal via inverse CDF of one uniform.
    #[inline(always)]
    pub fn normal(self, stream_id: u64, counter: u64) -> f64 {
        fast_normal_quantile(self.uniform(stream_id, counter))
    }
}

#[inline(always)]
fn bits_to_open_unit(b: u64) -> f64 {
    ((b >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// A sequential view of one counter-based stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomStream {
    pub seed: u64,
    pub stream_id: u64,
    pub counter: u64,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self::at(seed, stream_id, 0)
    }

    pub fn at(seed: u64, stream_id: u64, counter: u64) -> Self {
        RandomStream {
            seed,
            stream_id,
            counter,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let out = SeedKey::new(self.seed).bits(self.stream_id, self.counter);
        self.counter = self.counter.wrapping_add(1);
        out
    }

    /// Uniform on (0, 1); never returns 0 or 1.
    pub fn next_uniform(&mut self) -> f64 {
        bits_to_open_unit(self.next_u64())
    }

    pub fn next_normal(&mut self) -> f64 {
        fast_normal_quantile(self.next_uniform())
    }
}
