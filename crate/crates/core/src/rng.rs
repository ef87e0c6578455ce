//! Deterministic random substreams.
//!
//! Every stochastic per-plane operation draws from its own ChaCha8 stream so
//! results do not depend on processing order. A substream is the ChaCha8
//! generator seeded with `seed` (via `seed_from_u64`) and switched to stream
//! number `(pass << 32) | index`. `pass` separates independent applications
//! of the same operation (e.g. the first and second degradation of a
//! double-degraded stack); `index` is normally the depth index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream selector for a stochastic pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pass(pub u32);

impl Pass {
    pub const FIRST: Pass = Pass(0);
    pub const SECOND: Pass = Pass(1);
}

pub fn substream(seed: u64, pass: Pass, index: usize) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((pass.0 as u64) << 32) | (index as u64 & 0xffff_ffff));
    rng
}

/// Plain seeded generator for non-per-plane uses.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
