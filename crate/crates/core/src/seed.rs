//! Seed derivation. Every random stream in a study descends from the study
//! seed through these functions, so reruns are reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used throughout the crate. ChaCha is portable across platforms.
pub type SeededRng = ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed handed to the simulator for one trial.
pub fn trial_seed(study_seed: u64, trial_id: u64) -> u64 {
    splitmix64(study_seed ^ splitmix64(trial_id.wrapping_add(1)))
}

/// Independent stream for a named purpose (search, design, ...).
pub fn stream(study_seed: u64, purpose: u64) -> SeededRng {
    SeededRng::seed_from_u64(splitmix64(study_seed.wrapping_add(purpose.wrapping_mul(0xA24B_AED4_963E_E407))))
}

pub fn rng(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}
