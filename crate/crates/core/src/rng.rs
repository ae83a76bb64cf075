//! Deterministic random streams derived from a single master seed.
//!
//! Every stochastic step of a run draws from a stream addressed by
//! (master seed, generation, island, role). Streams are re-derived on
//! demand, so a resumed run reproduces the exact draw sequence of an
//! uninterrupted one without persisting generator state.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream roles, kept distinct so adding draws to one phase never
/// shifts the draws of another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Seeding = 1,
    ParentSampling = 2,
    CousinSampling = 3,
    Proposal = 4,
}

/// splitmix64 finalizer; mixes label words into a well-spread 64-bit seed.
fn mix(mut state: u64, word: u64) -> u64 {
    state = state.wrapping_add(word).wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the stream for one (generation, island, role) address.
pub fn stream(master_seed: u64, generation: u32, island: u32, role: Role) -> ChaCha8Rng {
    let mut s = mix(master_seed, 0x5354_4D41_5053_0001); // domain tag
    s = mix(s, generation as u64);
    s = mix(s, island as u64);
    s = mix(s, role as u64);
    ChaCha8Rng::seed_from_u64(s)
}
