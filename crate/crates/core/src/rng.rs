//! Named, seed-derived random streams.
//!
//! Every stochastic component (init, shuffling, dropout masks) draws from its
//! own stream so that changing one does not perturb the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

// SplitMix64 finalizer; enough to decorrelate nearby seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// A generator for stream `name` indexed by `path` under `seed`.
pub fn stream(seed: u64, name: &str, path: &[u64]) -> Rng {
    let mut state = mix(seed ^ mix(name_hash(name)));
    for &p in path {
        state = mix(state ^ mix(p));
    }
    Rng::seed_from_u64(state)
}
