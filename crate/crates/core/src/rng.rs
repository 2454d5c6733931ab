//! Reproducible random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by
//! `(seed, purpose, indices)`. The 256-bit key is the SplitMix64 expansion
//! of `seed`; the 64-bit stream id is a SplitMix64 fold of the purpose tag
//! and the indices (iteration, subject, mode, replication, ...). Distinct
//! purposes therefore never share a stream, and draws do not depend on the
//! order in which independent work items are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type CometRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    ProjectionR = 1,
    ProjectionS = 2,
    Init = 3,
    Sweep = 4,
    Dtilde = 5,
    Predict = 6,
    TrueFactors = 7,
    Covariates = 8,
    RandomEffects = 9,
    Noise = 10,
    Geweke = 11,
    Benchmark = 12,
    Demo = 13,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(acc: u64, value: u64) -> u64 {
    let mut s = acc ^ value.wrapping_mul(GOLDEN);
    splitmix64(&mut s)
}

/// Derives a child seed, for handing a sub-task its own root seed.
pub fn derive_seed(seed: u64, purpose: Purpose, indices: &[u64]) -> u64 {
    indices
        .iter()
        .fold(mix(seed, purpose as u64), |acc, &i| mix(acc, i))
}

pub fn stream(seed: u64, purpose: Purpose, indices: &[u64]) -> CometRng {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    let id = indices
        .iter()
        .fold(mix(0, purpose as u64), |acc, &i| mix(acc, i));
    rng.set_stream(id);
    rng
}
