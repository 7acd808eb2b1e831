//! Seeded randomness shared by every stochastic stage.
//!
//! All randomness flows through [`ChaCha8Rng`], a counter-based stream cipher
//! generator whose output is defined bit-for-bit independently of platform or
//! endianness. A `u64` seed is expanded to the 256-bit ChaCha key with
//! `SeedableRng::seed_from_u64` (a PCG32 expansion, fixed by `rand_core`).
//!
//! Variates are drawn with fixed methods:
//!
//! * uniform `f64` in `[0, 1)`: the top 53 bits of one `u64`, scaled by 2^-53;
//! * standard normal: the ZIGNOR ziggurat of `rand_distr::StandardNormal`;
//! * uniform index in `0..n`: `rand`'s widening-multiply rejection method.
//!
//! Stages that need their own stream derive a seed from a global seed and a
//! stage label with [`derive_seed`].

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

pub use rand_chacha::ChaCha8Rng;

/// Generator for `seed`.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a stage label into a global seed.
///
/// The label is hashed with 64-bit FNV-1a, XORed into the seed and passed
/// through the SplitMix64 finalizer.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

/// Seed for the `index`-th item of a stage.
pub fn derive_indexed(seed: u64, label: &str, index: u64) -> u64 {
    splitmix64(derive_seed(seed, label) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Uniform draw from the half-open interval `[lo, hi)`; returns `lo` when
/// `lo == hi`.
pub fn uniform_half_open<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    let x = lo + (hi - lo) * u;
    if x >= hi && hi > lo {
        // rounding landed on the upper edge
        f64::from_bits(hi.to_bits() - 1).max(lo)
    } else {
        x
    }
}
