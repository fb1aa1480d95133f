//! Seeded randomness. Every stochastic routine in the crate draws from a
//! `ChaCha8Rng` created here, so a run is fully determined by its seeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream for a sub-task (row of a sweep, chain, ...).
pub fn substream(seed: u64, stream: u64) -> LabRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
