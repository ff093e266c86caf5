//! Deterministic random substreams.
//!
//! Every random quantity in a simulation is drawn from a generator seeded by
//! `(master seed, purpose tag, index...)`. A trial therefore sees the same
//! numbers no matter which worker runs it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator type used for every substream.
pub type SimRng = ChaCha8Rng;

/// What a substream is used for. Distinct tags never share numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamTag {
    Layout = 1,
    RicianFactors = 2,
    OptimizerInit = 3,
    RisPhases = 4,
    ChannelCalibration = 5,
    ChannelHeldOut = 6,
    ChannelDetection = 7,
    NoiseCalibration = 8,
    NoiseHeldOut = 9,
    NoiseDetection = 10,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a 64-bit seed from a master seed, a tag and a list of indices.
pub fn derive_seed(master: u64, tag: StreamTag, indices: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ splitmix64(tag as u64));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    h
}

/// Generator for the substream keyed by `(master, tag, indices)`.
pub fn substream(master: u64, tag: StreamTag, indices: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, tag, indices))
}
