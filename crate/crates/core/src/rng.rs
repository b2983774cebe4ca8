//! Per-chain Gaussian noise keyed by `(seed, chain, step)`.
//!
//! Each chain owns a ChaCha8 stream: the key is expanded from the run seed
//! with `seed_from_u64`, the 64-bit stream id is the chain id, and the draws
//! for step `k` start at word position `k · words_per_step`. A step in
//! dimension `d` consumes `⌈d/2⌉` Box–Muller pairs, each built from two
//! consecutive `u64` outputs `a, b`:
//!
//! ```text
//! u1 = ((a >> 11) + 1) · 2⁻⁵³      ∈ (0, 1]
//! u2 = (b >> 11) · 2⁻⁵³            ∈ [0, 1)
//! z0 = √(−2 ln u1) · cos(2π u2)
//! z1 = √(−2 ln u1) · sin(2π u2)    (dropped for the last pair when d is odd)
//! ```
//!
//! Draws therefore never depend on thread scheduling or on which other chains
//! exist.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream ids with this bit set are reserved for initial-state draws.
const INIT_STREAM: u64 = 1 << 63;
const TWO_POW_M53: f64 = 1.0 / 9_007_199_254_740_992.0;

#[derive(Debug, Clone)]
pub struct ChainStream {
    rng: ChaCha8Rng,
    words_per_step: u128,
}

impl ChainStream {
    /// Stream used by the dynamics of chain `chain_id` in dimension `dim`.
    pub fn new(seed: u64, chain_id: u64, dim: usize) -> Self {
        Self::with_stream(seed, chain_id & !INIT_STREAM, dim)
    }

    /// Separate stream for drawing the initial state of `chain_id`.
    pub fn for_init(seed: u64, chain_id: u64, dim: usize) -> Self {
        Self::with_stream(seed, chain_id | INIT_STREAM, dim)
    }

    fn with_stream(seed: u64, stream: u64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        // two u64 (= four 32-bit words) per Box–Muller pair
        let words_per_step = 4 * dim.div_ceil(2) as u128;
        Self { rng, words_per_step }
    }

    /// Fills `out` with the standard normals of step `step`.
    pub fn normals_at(&mut self, step: u64, out: &mut [f64]) {
        let pos = step as u128 * self.words_per_step;
        // Seeking regenerates the block buffer, so only do it when out of order.
        if self.rng.get_word_pos() != pos {
            self.rng.set_word_pos(pos);
        }
        fill_box_muller(&mut self.rng, out);
    }
}

fn fill_box_muller(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for pair in out.chunks_mut(2) {
        let u1 = ((rng.next_u64() >> 11) + 1) as f64 * TWO_POW_M53;
        let u2 = (rng.next_u64() >> 11) as f64 * TWO_POW_M53;
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        pair[0] = r * c;
        if let Some(second) = pair.get_mut(1) {
            *second = r * s;
        }
    }
}

/// The `dim` normals chain `chain_id` receives at step `step`.
pub fn normals_for(seed: u64, chain_id: u64, step: u64, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    ChainStream::new(seed, chain_id, dim).normals_at(step, &mut out);
    out
}
