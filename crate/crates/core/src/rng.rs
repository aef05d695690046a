//! Keyed random streams.
//!
//! Every random decision in a campaign draws from a ChaCha stream whose seed
//! is derived from a key path (master seed, api, iteration, rule, ...). Two
//! workers never share a stream, and any single decision can be replayed from
//! its key alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type CaseRng = ChaCha8Rng;

/// A node in the key tree. Deriving a child never mutates the parent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn root(master_seed: u64) -> Self {
        StreamKey(master_seed)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn child(self, label: &str) -> Self {
        self.derive(label.as_bytes())
    }

    pub fn child_u64(self, n: u64) -> Self {
        self.derive(&n.to_le_bytes())
    }

    fn derive(self, bytes: &[u8]) -> Self {
        let mut h = Sha256::new();
        h.update(self.0.to_le_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
        let digest = h.finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        StreamKey(u64::from_le_bytes(word))
    }

    pub fn rng(self) -> CaseRng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

pub fn rng_from_seed(seed: u64) -> CaseRng {
    ChaCha8Rng::seed_from_u64(seed)
}
