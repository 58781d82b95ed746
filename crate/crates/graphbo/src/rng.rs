//! Seed derivation and RNG construction.
//!
//! All randomness in the crate flows from explicit `u64` seeds through
//! [`ChaCha8Rng`], which has a stable stream across platforms and releases.
//! Independent sub-streams (graph generation, initial design, batch sampling,
//! per-trial seeds, ...) are derived from a master seed with [`derive_seed`]
//! so that adding a consumer never perturbs the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a named sub-seed from `master`. The `tag` separates logical streams
/// ("init", "omega0", ...) and `index` separates repetitions within a stream.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    // FNV-1a over the tag, then two SplitMix64 scrambles to decorrelate.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut s = master ^ h.rotate_left(17) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    splitmix64(&mut s);
    splitmix64(&mut s)
}

/// Seeded RNG for a named sub-stream of `master`.
pub fn stream(master: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, index))
}

/// Seeded RNG directly from a seed.
pub fn from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
