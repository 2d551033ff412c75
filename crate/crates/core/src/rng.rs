//! Counter-based random streams: every entity draws from a generator keyed by
//! `(seed, domain, id)`, so output does not depend on generation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Distinct domains never share a generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Thread = 1,
    Users = 2,
    Authors = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for one entity.
pub fn stream(seed: u64, domain: Domain, id: u64) -> ChaCha8Rng {
    let key = splitmix64(splitmix64(seed ^ splitmix64(domain as u64)) ^ id);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(domain as u64);
    rng
}
