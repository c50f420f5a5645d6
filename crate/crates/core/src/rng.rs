//! Seeded, platform-stable randomness.
//!
//! Everything random in this crate flows through ChaCha8 streams so that a
//! run is a pure function of its seeds: same seed, same bits, on every
//! platform. Gaussian draws are produced in `f64` and cast down, so an
//! `f32` model and its `f64` twin are built from the same draw sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for a single seed.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Deterministic generator for a keyed stream.
///
/// Used where independent draws are needed per (seed, counter) pair, e.g.
/// one shuffle stream per diffusion step. The key is mixed through
/// SplitMix64 so neighbouring counters do not produce correlated streams.
pub fn seeded_stream(seed: u64, counter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(counter)))
}

/// Standard normal draw via Box-Muller; consumes exactly two uniforms.
pub fn normal_f64<R: Rng>(rng: &mut R) -> f64 {
    // gen::<f64>() is uniform over [0, 1); shift off zero for the log.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// SplitMix64 finalizer. Stable integer mixing independent of std's hasher.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// FNV-1a over a byte string. Used for token hashing in the text embedder,
/// where the hash must never change between builds.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}
