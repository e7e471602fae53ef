//! Seeded, splittable randomness.
//!
//! Every consumer asks for a named stream derived from one 64-bit seed, so
//! adding a new consumer never shifts the numbers another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for the stream `label`.
    pub fn rng(&self, label: &str) -> Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(fnv1a64(label.as_bytes()));
        r
    }

    /// A subtree keyed by `label`.
    pub fn child(&self, label: &str) -> SeedTree {
        let mut key = self.seed.to_le_bytes().to_vec();
        key.extend_from_slice(label.as_bytes());
        SeedTree {
            seed: fnv1a64(&key),
        }
    }
}
