//! Deterministic random streams.
//!
//! Every source of randomness in the pipeline is derived from one root seed
//! through a named substream, so e.g. changing the number of evaluation seeds
//! never perturbs what distillation sampled.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the substream name; stable across platforms.
fn name_hash(name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// A deterministic stream derived from `(root, name)`.
pub fn substream(root: u64, name: &str) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&root.to_le_bytes());
    seed[8..16].copy_from_slice(&name_hash(name).to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// A substream further indexed by an integer (per-step, per-seed, ...).
pub fn substream_indexed(root: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&root.to_le_bytes());
    seed[8..16].copy_from_slice(&name_hash(name).to_le_bytes());
    seed[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// Standard normal draw via Box–Muller (avoids an extra distribution crate).
pub fn standard_normal(rng: &mut impl rand::Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}
