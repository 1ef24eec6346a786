//! Counter-style seeding: every random draw in a run comes from a ChaCha
//! stream keyed by `(seed, domain, a, b, c)`, so the draw for one sample does
//! not depend on batch composition, on `m`, or on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct domains never share a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Init = 1,
    Shuffle = 2,
    TrainNoise = 3,
    RandomPixels = 4,
    EvalNoise = 5,
    Visualize = 6,
    Synthetic = 7,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Root of all randomness for one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, domain: Domain, a: u64, b: u64, c: u64) -> ChaCha8Rng {
        let mut state = self.seed;
        let mut key = [0u8; 32];
        let words = [domain as u64, a, b, c];
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            state ^= w.wrapping_mul(0xD6E8_FEB8_6659_FD93);
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }

    /// An unrelated root derived from this one and `tag`.
    pub fn fork(&self, tag: u64) -> Streams {
        let mut state = self.seed ^ tag.wrapping_mul(0xA076_1D64_78BD_642F);
        Streams::new(splitmix64(&mut state))
    }
}
