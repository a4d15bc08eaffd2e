//! Seeded random streams.
//!
//! Every consumer of randomness derives a ChaCha8 generator from the user
//! seed and a fixed stream id, so results do not depend on evaluation order
//! or on how many threads are used.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub(crate) const STREAM_PRIOR: u64 = 0;
pub(crate) const STREAM_NOISE: u64 = 1;
pub(crate) const STREAM_SGD: u64 = 2;
pub(crate) const STREAM_QUERY: u64 = 3;
pub(crate) const STREAM_POOL: u64 = 4;

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Uniform in `(0, 1]` and `[0, 1)` from two 64-bit words.
fn uniforms(rng: &mut ChaCha8Rng) -> (f64, f64) {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let a = rng.next_u64();
    let b = rng.next_u64();
    (((a >> 11) + 1) as f64 * SCALE, (b >> 11) as f64 * SCALE)
}

/// Two independent standard normals by Box-Muller; consumes four 32-bit words.
pub(crate) fn normal_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let (u1, u2) = uniforms(rng);
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

pub(crate) fn fill_normals(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let mut chunks = out.chunks_exact_mut(2);
    for pair in &mut chunks {
        let (a, b) = normal_pair(rng);
        pair[0] = a;
        pair[1] = b;
    }
    if let [last] = chunks.into_remainder() {
        *last = normal_pair(rng).0;
    }
}

/// Uniform in `[0, 1)`.
pub(crate) fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}
