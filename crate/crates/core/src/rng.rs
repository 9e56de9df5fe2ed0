//! Seed expansion into independent, schedule-free random substreams.
//!
//! Every agent owns one ChaCha stream per communicated quantity. A stream is
//! addressed by `(root seed, stream id)` only, so the values an agent draws do
//! not depend on how rounds or agents are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seed used across all experiments unless overridden.
pub const DEFAULT_SEED: u64 = 42;

/// Which logical quantity a stream serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Initial iterate and compression memories.
    Init,
    /// Compression randomness for the decision-variable channel.
    Decision,
    /// Compression randomness for the gradient-tracker channel.
    Tracker,
    /// Anything outside the solver (data generation, diagnostics).
    Aux(u32),
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Init => 0,
            Stream::Decision => 1,
            Stream::Tracker => 2,
            Stream::Aux(k) => 16 + k as u64,
        }
    }
}

/// Returns the substream for `(seed, stream, agent)`.
pub fn substream(seed: u64, stream: Stream, agent: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream.tag() << 32) | agent as u64);
    rng
}

/// One substream per agent for the given channel.
pub fn agent_streams(seed: u64, stream: Stream, n: usize) -> Vec<ChaCha8Rng> {
    (0..n).map(|i| substream(seed, stream, i)).collect()
}
