//! Keyed random streams.
//!
//! Every random quantity is drawn from a ChaCha stream whose key is derived
//! from `(seed, role, ids...)`. A cluster's longitudinal effect, for
//! example, comes from the stream keyed by `(seed, Longitudinal, cluster_id)`
//! no matter which cluster was generated first or on which thread, so
//! samples and permutation replicates are reproducible and can be produced
//! in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Distinct roles never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamRole {
    Longitudinal = 1,
    CrossSectional = 2,
    UnitNoise = 3,
    PopulationDraw = 4,
    UnitMultiplier = 5,
    Replicate = 6,
    Repetition = 7,
    Setting = 8,
    DataSeed = 9,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds the key into a 64-bit digest. Each component passes through a
/// full SplitMix round so that `(1, 2)` and `(2, 1)` land far apart.
fn digest(seed: u64, role: StreamRole, ids: &[u64]) -> u64 {
    let mut state = seed;
    let mut acc = splitmix(&mut state);
    for &word in std::iter::once(&(role as u64)).chain(ids) {
        state ^= word.wrapping_mul(GOLDEN) ^ acc.rotate_left(17);
        acc = splitmix(&mut state);
    }
    acc
}

/// Opens the stream for `(seed, role, ids)`.
pub fn stream(seed: u64, role: StreamRole, ids: &[u64]) -> StreamRng {
    let mut state = digest(seed, role, ids);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Derives a child seed, e.g. the data seed of one simulation repetition.
pub fn derive_seed(seed: u64, role: StreamRole, ids: &[u64]) -> u64 {
    let mut state = digest(seed, role, ids);
    splitmix(&mut state)
}
