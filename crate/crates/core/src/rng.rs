//! Deterministic RNG stream derivation.
//!
//! Every randomized stage derives its own ChaCha stream from the run seed
//! plus a label path, so parallel laps and repeated runs reproduce exactly.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 step; good enough to spread label paths into seed material.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent RNG from `seed` and a label path such as
/// `&[PHASE_TRAIN, lap_index]`.
pub fn derive_rng(seed: u64, labels: &[u64]) -> ChaCha8Rng {
    let mut state = seed ^ 0x6d69_6e64_7374_6163; // domain separator
    for &l in labels {
        state ^= splitmix64(&mut state) ^ l.wrapping_mul(0x2545_f491_4f6c_dd1d);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Stage labels used across the crate. Centralized so no two stages collide.
pub mod label {
    pub const DATASET: u64 = 1;
    pub const PRETRAIN: u64 = 2;
    pub const PHASE_BEFORE: u64 = 3;
    pub const PHASE_TRAIN: u64 = 4;
    pub const PHASE_AFTER: u64 = 5;
    pub const PARTICLE_FILTER: u64 = 6;
    pub const SCAN_NOISE: u64 = 7;
    pub const PARAM_INIT: u64 = 8;
    pub const PHASE_STANLEY_ONLY: u64 = 9;
    pub const PHASE_COMBINED: u64 = 10;
    pub const COMPARE: u64 = 11;
}
