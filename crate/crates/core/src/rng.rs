//! Seeded random streams.
//!
//! Every stochastic routine takes its randomness from a [`ChaCha8Rng`]. Work
//! that is split into independent units (bootstrap resamples, simulation
//! iterations) gets one substream per unit, keyed by `(seed, unit index)`, so
//! parallel and sequential execution draw identical numbers.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

/// Root stream for a seed.
pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent substream `index` of `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derives a child seed from a parent seed and a label, for components that
/// need their own root stream (e.g. one per training fold).
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    splitmix64(seed ^ splitmix64(label.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

/// Index drawn from a discrete distribution using one uniform `u` in `[0, 1)`.
///
/// Inverse-CDF lookup; weights need not be normalized. Falls back to the last
/// index with positive weight when rounding leaves `u` past the final bucket.
pub fn categorical(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
