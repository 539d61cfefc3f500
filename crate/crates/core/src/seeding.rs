//! Deterministic per-run random streams.
//!
//! A run's seed is a pure function of `(master_seed, run_index)`, and each run
//! owns independent ChaCha8 streams selected by a fixed stream id. Ensembles can
//! therefore be split across workers in any order and still reproduce bit-exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Pair selection and card samples.
    Dynamics = 0,
    /// Tie-breaking in individual and group decisions.
    Decisions = 1,
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of run `run_index` within the ensemble keyed by `master_seed`.
pub fn run_seed(master_seed: u64, run_index: u64) -> u64 {
    mix64(mix64(master_seed.wrapping_add(GOLDEN_GAMMA)) ^ run_index.wrapping_mul(GOLDEN_GAMMA))
}

/// Generator for one stream of one run.
pub fn stream_rng(run_seed: u64, stream: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(stream as u64);
    rng
}
