//! Counter-addressed random substreams.
//!
//! Every random draw in the simulator is addressed by `(seed, stream name,
//! counter...)`. A draw never depends on how many other draws happened before
//! it, so groups can be sampled in any order or in parallel and still produce
//! bit-identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const NAME_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const NAME_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_name(name: &str) -> u64 {
    name.bytes()
        .fold(NAME_BASIS, |h, b| (h ^ u64::from(b)).wrapping_mul(NAME_PRIME))
}

/// A named family of random generators derived from a root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    key: u64,
}

impl RngStream {
    pub fn new(seed: u64, name: &str) -> Self {
        RngStream {
            key: splitmix64(splitmix64(seed) ^ hash_name(name)),
        }
    }

    /// Child stream; `a.child("x")` and `a.child("y")` never share draws.
    pub fn child(&self, name: &str) -> Self {
        RngStream {
            key: splitmix64(self.key ^ hash_name(name)),
        }
    }

    /// Generator for one counter address within this stream.
    pub fn at(&self, counter: &[u64]) -> ChaCha8Rng {
        let mut state = self.key;
        for &c in counter {
            state = splitmix64(state ^ splitmix64(c.wrapping_add(0x632b_e59b_d9b4_e019)));
        }
        let mut seed = [0u8; 32];
        for (i, chunk) in seed.chunks_mut(8).enumerate() {
            state = splitmix64(state.wrapping_add(i as u64));
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}
