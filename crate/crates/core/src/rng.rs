//! Seedable counter-based randomness.
//!
//! One base seed plus one stream id per independent sampling task, so Monte
//! Carlo results are identical regardless of thread count or scheduling.
//! Trajectory `j` draws its channel losses from stream `2j` and any attacker
//! randomness from stream `2j + 1`.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for trajectory `j`'s channel-loss draws.
pub fn markov_stream(traj: u64) -> u64 {
    2 * traj
}

/// Stream id for trajectory `j`'s attacker draws.
pub fn jam_stream(traj: u64) -> u64 {
    2 * traj + 1
}
