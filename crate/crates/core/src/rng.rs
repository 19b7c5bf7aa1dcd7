//! Seed expansion. A master seed is split into independent generator streams
//! keyed by purpose and integer coordinates, so the order in which parallel
//! jobs draw randomness never changes a result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used throughout the crate.
pub type SeededRng = ChaCha8Rng;

/// What a derived stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    TrainTestSplit,
    AgentSplit,
    FeatureKeys,
    HdcKeys,
    Repetition,
    CrossValidation,
    Synthetic,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::TrainTestSplit => 0x5350_4c49_5400_0001,
            Purpose::AgentSplit => 0x4147_454e_5400_0002,
            Purpose::FeatureKeys => 0x4645_4154_4b00_0003,
            Purpose::HdcKeys => 0x4844_434b_4559_0004,
            Purpose::Repetition => 0x5245_5045_4154_0005,
            Purpose::CrossValidation => 0x4356_464f_4c44_0006,
            Purpose::Synthetic => 0x5359_4e54_4800_0007,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministically mixes `master`, `purpose` and `coords` into a child seed.
pub fn derive_seed(master: u64, purpose: Purpose, coords: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ purpose.tag());
    for &c in coords {
        h = splitmix64(h ^ splitmix64(c));
    }
    h
}

pub fn stream(master: u64, purpose: Purpose, coords: &[u64]) -> SeededRng {
    SeededRng::seed_from_u64(derive_seed(master, purpose, coords))
}
