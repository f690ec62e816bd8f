//! Counter-based random substreams.
//!
//! Every consumer of randomness draws from a stream keyed by `(seed, channel, index)`,
//! so that path `i` of a simulation sees the same numbers regardless of how many
//! other paths are simulated or which worker thread runs it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent families of streams derived from one user seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Channel {
    /// Driving Brownian motion `W` of the forward equation.
    Brownian = 1,
    /// Independent Brownian motion `B` carrying the orthogonal martingale.
    Orthogonal = 2,
    /// Sample points for assumption audits.
    Audit = 3,
    /// Random measures for the convexity audit.
    Measures = 4,
    /// State points for the convexity audit.
    StatePoints = 5,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Returns the generator for stream `index` of `channel` under `seed`.
pub fn substream(seed: u64, channel: Channel, index: u64) -> ChaCha8Rng {
    let key = mix(seed ^ (channel as u64).wrapping_mul(GOLDEN));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
