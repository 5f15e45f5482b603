//! Seed derivation.
//!
//! One experiment seed fans out into independent streams: every stochastic
//! site (initialization, shuffling, augmentation, cutout) asks for a child
//! stream by label and index, so adding or reordering sites never perturbs
//! the others. Streams are backed by ChaCha8, which is counter-based.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedStream {
    key: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { key: splitmix64(seed) }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Child stream identified by a label.
    pub fn child(&self, label: &str) -> Self {
        self.mix(fnv1a(label.as_bytes()))
    }

    /// Child stream identified by an index.
    pub fn index(&self, i: u64) -> Self {
        self.mix(splitmix64(i ^ 0x5851_f42d_4c95_7f2d))
    }

    fn mix(&self, tag: u64) -> Self {
        Self {
            key: splitmix64(self.key ^ splitmix64(tag)),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key)
    }
}
