//! Seeded random substreams.
//!
//! A single master seed drives every random choice in a run. Each purpose
//! (scan jitter, measurement noise, phantom, probe, ...) draws from its own
//! ChaCha stream, so changing how many numbers one purpose consumes never
//! shifts another. Per-patch noise additionally indexes the stream by patch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Pattern,
    Noise,
    Phantom,
    Probe,
    Solver,
}

impl Stream {
    fn label(self) -> u64 {
        match self {
            Stream::Pattern => 1,
            Stream::Noise => 2,
            Stream::Phantom => 3,
            Stream::Probe => 4,
            Stream::Solver => 5,
        }
    }
}

/// Random generator for `stream`, sub-indexed by `index` (e.g. patch number).
pub fn substream(seed: u64, stream: Stream, index: u32) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream.label() << 32) | index as u64);
    rng
}
