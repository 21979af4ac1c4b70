//! Counter-based random substreams.
//!
//! Every random draw in a simulation comes from a ChaCha8 stream selected by
//! `(master_seed, domain, point, trial)`. Streams are derived statelessly, so a
//! trial produces the same numbers no matter which thread runs it or in what
//! order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Separates stream families that share a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Domain {
    Slots = 1,
    SensingValidation = 2,
    PlacementSampling = 3,
    MomentCheck = 4,
    SelfTest = 5,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random stream for one trial.
pub fn substream(master_seed: u64, domain: Domain, point: u64, trial: u64) -> ChaCha8Rng {
    let mut state = master_seed;
    let mut mix = splitmix64(&mut state) ^ (domain as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    mix = splitmix64(&mut mix) ^ point.wrapping_mul(0xA076_1D64_78BD_642F);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut mix).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(trial);
    rng
}
