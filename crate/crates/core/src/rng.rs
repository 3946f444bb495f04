//! Deterministic seeding: one root seed, expanded by a counter into
//! independent ChaCha streams so parallel chains stay reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Splits a root seed into numbered, statistically independent streams.
///
/// Stream `k` is the ChaCha12 generator with the root seed and stream
/// counter `k`; the mapping is pure, so any chain can be re-derived
/// from `(root_seed, k)` alone regardless of thread scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SeedSplitter {
    pub root_seed: u64,
}

impl SeedSplitter {
    pub fn new(root_seed: u64) -> Self {
        Self { root_seed }
    }

    /// RNG for stream index `k`.
    pub fn stream(&self, k: u64) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.root_seed);
        rng.set_stream(k);
        rng
    }
}
