//! Benchmark harness: episode splits, instance sweeps, metrics, synthetic
//! datasets and report formatting.

pub mod episode;
pub mod metrics;
pub mod report;
pub mod sweep;
pub mod synthetic;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded generator used for every random draw in the harness: ChaCha with
/// 8 rounds, keyed through `SeedableRng::seed_from_u64`.
pub type HarnessRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> HarnessRng {
    ChaCha8Rng::seed_from_u64(seed)
}
