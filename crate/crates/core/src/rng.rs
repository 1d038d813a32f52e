//! Counter-based random streams.
//!
//! A [`SimRng`] is a 64-bit key. Child keys are derived by hashing tags into
//! it, so every (episode, iteration, purpose, ...) tuple owns an independent
//! ChaCha stream and simulations never share mutable generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for inside one simulation iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Patrol = 1,
    Arrivals = 2,
    SceneTime = 3,
    Shuffle = 4,
    Init = 5,
    Episode = 6,
    Split = 7,
    Lookahead = 8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SimRng {
    key: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self { key: splitmix(seed) }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Independent child stream for `tag`.
    pub fn derive(&self, tag: u64) -> SimRng {
        SimRng { key: splitmix(self.key ^ splitmix(tag.wrapping_add(0x632b_e59b_d9b4_e019))) }
    }

    pub fn derive_all(&self, tags: &[u64]) -> SimRng {
        tags.iter().fold(*self, |r, &t| r.derive(t))
    }

    /// Generator for this key.
    pub fn generator(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key)
    }

    /// Generator for one purpose within one iteration.
    pub fn stream(&self, iteration: u64, purpose: Purpose) -> ChaCha8Rng {
        self.derive_all(&[iteration, purpose as u64]).generator()
    }

    /// Like [`SimRng::stream`] but additionally keyed by an agent or slot index.
    pub fn agent_stream(&self, iteration: u64, purpose: Purpose, index: usize) -> ChaCha8Rng {
        self.derive_all(&[iteration, purpose as u64, index as u64]).generator()
    }
}
