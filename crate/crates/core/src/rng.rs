//! Named, independently seeded random streams.
//!
//! Every component draws from its own ChaCha stream derived from one global
//! seed, so re-running a single stage with the same seed reproduces it
//! without replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A component that owns a random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Nnmf,
    Sampler,
    Trainer,
    Negatives,
    Shuffle,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Nnmf => 1,
            Stream::Sampler => 2,
            Stream::Trainer => 3,
            Stream::Negatives => 4,
            Stream::Shuffle => 5,
        }
    }
}

/// Stream `stream` of the generator keyed by `seed`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    sub_stream_rng(seed, stream, 0)
}

/// Worker-indexed sub-stream, used by parallel samplers.
pub fn sub_stream_rng(seed: u64, stream: Stream, worker: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream.id() << 32) | (worker & 0xffff_ffff));
    rng
}
