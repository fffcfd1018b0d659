//! Seed derivation.
//!
//! Every random decision in the pipeline draws from a ChaCha8 stream keyed
//! by a 64-bit seed. Seeds for instances and for the stages inside an
//! instance are derived with the SplitMix64 finalizer so workers never
//! share RNG state:
//!
//! ```text
//! mix(z):
//!     z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!     z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!     z ^ (z >> 31)
//!
//! instance_seed(master, index) = mix(master + 0x9E3779B97F4A7C15 * (index + 1))
//! stage_seed(seed, stage)      = mix(seed ^ mix(stage))
//! ```
//!
//! All arithmetic wraps modulo 2^64.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn instance_seed(master: u64, index: u64) -> u64 {
    mix(master.wrapping_add(GOLDEN_GAMMA.wrapping_mul(index.wrapping_add(1))))
}

/// Independent sub-stream for one named pipeline stage.
pub fn stage_seed(seed: u64, stage: Stage) -> u64 {
    mix(seed ^ mix(stage as u64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stage {
    Layout = 1,
    Graph = 2,
    Grounding = 3,
    Mechanisms = 4,
    Query = 5,
    Render = 6,
    Noise = 7,
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the reference SplitMix64 generator seeded with 0:
        // state advances by the golden gamma, output is mix(state).
        assert_eq!(mix(GOLDEN_GAMMA), 0xE220_A839_7B1D_CDAF);
        assert_eq!(mix(GOLDEN_GAMMA.wrapping_mul(2)), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(instance_seed(0, 0), 0xE220_A839_7B1D_CDAF);
    }

    #[test]
    fn stages_differ() {
        let a = stage_seed(42, Stage::Graph);
        let b = stage_seed(42, Stage::Grounding);
        assert_ne!(a, b);
    }
}
