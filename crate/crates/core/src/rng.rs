//! Deterministic RNG plumbing: every simulation consumes a `SimRng` whose seed
//! is derived from a base seed plus a context tag, so results are reproducible
//! regardless of thread count or scheduling.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// The one generator used everywhere. ChaCha8 is fast, splittable via seed
/// derivation, and its `seed_from_u64` expansion is stable across platforms.
pub type SimRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in tag.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derive a child seed from `(base, tag, index)`. Used for per-trajectory and
/// per-replication streams: `child_seed(base, "rep", i)` is independent of how
/// replications are scheduled across threads.
pub fn child_seed(base: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ fnv1a(tag)) ^ index)
}

/// RNG for a derived stream.
pub fn stream_rng(base: u64, tag: &str, index: u64) -> SimRng {
    SimRng::seed_from_u64(child_seed(base, tag, index))
}

/// Uniform in [0, 1), 53-bit resolution.
pub fn unit_f64(rng: &mut SimRng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in (0, 1]; safe to take logarithms of.
pub fn unit_f64_open(rng: &mut SimRng) -> f64 {
    1.0 - unit_f64(rng)
}

/// Standard exponential via inversion.
pub fn sample_exp(rng: &mut SimRng) -> f64 {
    -unit_f64_open(rng).ln()
}

/// Bernoulli(p).
pub fn sample_bernoulli(rng: &mut SimRng, p: f64) -> bool {
    unit_f64(rng) < p
}

/// Index sampled from a probability vector by inverse CDF. The vector is
/// assumed normalized; any rounding slack goes to the last entry.
pub fn sample_categorical(rng: &mut SimRng, probs: &[f64]) -> usize {
    debug_assert!(!probs.is_empty());
    let u = unit_f64(rng);
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Geometric on {1, 2, ...} with P(n) = (1 - q) q^{n-1}, sampled by inversion.
pub fn sample_geometric(rng: &mut SimRng, q: f64) -> u64 {
    debug_assert!(q > 0.0 && q < 1.0);
    let u = unit_f64_open(rng);
    // n = 1 + floor(ln u / ln q); exact inverse CDF, no truncation.
    let n = 1.0 + (u.ln() / q.ln()).floor();
    n as u64
}
