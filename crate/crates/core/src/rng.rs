//! Deterministic per-task random streams.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StreamRng = Xoshiro256PlusPlus;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for task `(a, b)` under `seed`; the same triple
/// always yields the same stream regardless of scheduling.
pub fn stream(seed: u64, a: u64, b: u64) -> StreamRng {
    let h = splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b.wrapping_mul(0xd134_2543_de82_ef95));
    StreamRng::seed_from_u64(h)
}
