//! Seeded sample streams.
//!
//! Every random draw in the toolkit comes from a SplitMix64 stream whose
//! state is initialised to the seed verbatim (`x_{i+1} = x_i + 0x9E3779B97F4A7C15`,
//! then the standard finaliser). On top of the raw `u64` output:
//!
//! * uniform: `(u >> 11) * 2^-53`, redrawn while it equals 0, giving (0, 1);
//! * Laplace(0, b): inverse CDF `-b * sgn(u - 1/2) * ln(1 - 2|u - 1/2|)`, one uniform per draw;
//! * standard normal: Box-Muller on two uniforms `(u1, u2)`, yielding
//!   `r cos(2 pi u2)` first and `r sin(2 pi u2)` on the following draw.
//!
//! Any implementation reproducing these three transforms over SplitMix64
//! reproduces the obfuscated files bit for bit.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the UTF-8 bytes of `s`.
pub fn fnv1a64(s: &str) -> u64 {
    s.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Per-sequence seed: `seed XOR fnv1a64(seq_id)`.
pub fn sequence_seed(seed: u64, seq_id: &str) -> u64 {
    seed ^ fnv1a64(seq_id)
}

/// Mixes a list of integer keys into one seed by feeding them through
/// SplitMix64 in order.
pub fn mix_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5eed_u64, |acc, &p| {
        let mut g = SplitMix64::seed_from_u64(acc ^ p);
        g.next_u64()
    })
}

#[derive(Debug, Clone)]
pub struct SampleStream {
    inner: SplitMix64,
    spare_normal: Option<f64>,
}

impl SampleStream {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: SplitMix64::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        loop {
            let u = (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Uniform index in `0..n` (`n > 0`).
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * angle.sin());
        r * angle.cos()
    }

    pub fn laplace(&mut self, scale: f64) -> f64 {
        let c = self.uniform() - 0.5;
        -scale * c.signum() * (1.0 - 2.0 * c.abs()).ln()
    }
}
