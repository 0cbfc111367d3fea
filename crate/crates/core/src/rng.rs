//! Named random substreams derived from a master seed.
//!
//! Every stochastic component (data shuffling, channel noise, rollouts,
//! parameter init) draws from its own stream so that changing how much
//! randomness one component consumes never perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the substream `name` of `master`.
pub fn substream_seed(master: u64, name: &str) -> u64 {
    splitmix(master ^ splitmix(fnv1a(name.as_bytes())))
}

/// Independent generator for the substream `name` of `master`.
pub fn substream(master: u64, name: &str) -> Rng {
    Rng::seed_from_u64(substream_seed(master, name))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
