//! Deterministic random streams.
//!
//! Every trajectory, batch, or draw set gets its own ChaCha stream keyed by
//! `(seed, domain)` and selected by `index`, so results do not depend on how
//! work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SipsRng = ChaCha8Rng;

/// Stream domains used inside the library. Callers may use any other value.
pub mod domain {
    pub const SDE_TRAJECTORY: u64 = 1;
    pub const DIRECT_INTERPOLANT: u64 = 2;
    pub const SIPS_TRAJECTORY: u64 = 3;
    pub const PRIOR_DRAW: u64 = 4;
    pub const TRAINING: u64 = 5;
    pub const INIT: u64 = 6;
    pub const HELD_OUT: u64 = 7;
}

pub fn stream(seed: u64, domain: u64, index: u64) -> SipsRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
