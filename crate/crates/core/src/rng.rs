//! Reproducible random streams.
//!
//! Every stochastic quantity in the crate is drawn from a [`RngStream`]: a
//! ChaCha8 generator whose 256-bit key is expanded from a 64-bit master seed
//! by `rand_core`'s `seed_from_u64` (a PCG32 expansion), and whose 64-bit
//! ChaCha stream id is a caller-chosen index. Streams with distinct
//! `(master_seed, stream)` pairs are independent; the bit sequence depends
//! only on the pair, never on thread scheduling or platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifies one reproducible random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub const fn new(master_seed: u64, stream: u64) -> Self {
        RngStream { master_seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Shorthand for `RngStream::new(master_seed, stream).rng()`.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    RngStream::new(master_seed, stream).rng()
}

/// Builds a rayon pool with `threads` workers, or `None` to use the global pool.
pub(crate) fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("failed to build rayon thread pool")
            .install(f),
        None => f(),
    }
}
