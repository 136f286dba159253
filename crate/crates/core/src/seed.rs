//! Seed derivation.
//!
//! Every random stream in an experiment is derived from one master seed by
//! [`derive_seed`]`(master, role, index)`: the role tag is hashed with FNV-1a,
//! mixed with the master seed and index through SplitMix64 finalisers, and the
//! result seeds a ChaCha8 generator. Distinct (role, index) pairs give
//! statistically independent streams, so no two chains ever share one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Child seed for stream `index` of role `role` under `master`.
pub fn derive_seed(master: u64, role: &str, index: u64) -> u64 {
    let a = splitmix64(master ^ fnv1a(role));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derive_rng(master: u64, role: &str, index: u64) -> Rng {
    rng_from_seed(derive_seed(master, role, index))
}
