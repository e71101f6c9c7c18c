//! Counter-based random substreams.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by the
//! user seed and addressed by `(domain, index)`, so results do not depend on
//! thread count or the order in which items are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Distinct domains never share a stream for the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Sample = 1,
    Process = 2,
    Hamiltonian = 3,
    Experiment = 4,
}

const INDEX_BITS: u32 = 48;

pub fn substream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    debug_assert!(index < (1 << INDEX_BITS));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << INDEX_BITS) | index);
    rng
}
