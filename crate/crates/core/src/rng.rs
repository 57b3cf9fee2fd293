//! Seeded random streams. Every consumer derives its generator from a base
//! seed plus a stream id so results never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for `stream` under `seed`. Distinct streams are independent
/// ChaCha keystreams.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a base seed with a cell label (splitmix64 finalizer), for seeds of
/// independent jobs such as sweep cells.
pub fn derive_seed(base: u64, cell: u64) -> u64 {
    let mut z = base ^ cell.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
