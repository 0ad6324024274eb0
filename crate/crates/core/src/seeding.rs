//! Deterministic random streams keyed by `(seed, index)`.
//!
//! Every randomized operation in the crate derives its generator from here so
//! that results depend only on the seed and a stable index (column, scan line,
//! epoch, ...) and never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Mixes a label into a seed so independent consumers of one user seed do not
/// share streams.
pub fn derive(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, folded into the seed with a splitmix step.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
