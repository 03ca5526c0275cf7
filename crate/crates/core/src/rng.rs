//! Seeded random streams.
//!
//! Every run is driven by ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64(seed)` and then moved to a fixed stream id with
//! `set_stream`. Each consumer owns its own stream, so adding draws in one
//! phase never shifts the draws of another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// System states z(t) during the control phase.
pub const CONTROL_STATE: u64 = 0;
/// Reward noise during the control phase.
pub const CONTROL_REWARD: u64 = 1;
/// Everything drawn by the learning modules.
pub const LEARNING: u64 = 2;
/// Sign flips of the perturbed reward oracle.
pub const PERTURBATION: u64 = 3;
/// State observations of the state-distribution sampler.
pub const STATE_LEARNING: u64 = 4;

pub fn stream(seed: u64, id: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Inverse-CDF draw from a cumulative distribution. The last index absorbs
/// any rounding slack in the final cumulative value.
pub fn draw_index<R: Rng + ?Sized>(rng: &mut R, cumulative: &[f64]) -> usize {
    let u: f64 = rng.random();
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}

pub fn cumulative(probs: &[f64]) -> Vec<f64> {
    probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect()
}
