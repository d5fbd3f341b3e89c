//! Deterministic seed derivation.
//!
//! Every parallel unit of work (trajectory, TV batch, sweep grid point) draws
//! from its own generator seeded with `derive_seed(master, index)`, so results
//! never depend on how work is partitioned across threads.
//!
//! The mixing function is SplitMix64 applied twice:
//!
//! ```text
//! derive_seed(master, i) = splitmix64(master ^ splitmix64(i + 0x9E3779B97F4A7C15))
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for work unit `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(GOLDEN_GAMMA)))
}

/// Stable 64-bit key for a string label (FNV-1a). Used to seed sweep grid
/// points by their parameters rather than their position in the grid.
pub fn label_key(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn rng_for(master: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, index))
}
