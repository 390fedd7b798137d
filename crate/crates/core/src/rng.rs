//! Named random streams split from a single root seed.
//!
//! Every stochastic component draws from its own stream, keyed by a name and
//! a task index, so a run resumed at task `k` sees exactly the same draws as an
//! uninterrupted run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub mod streams {
    pub const SCENARIO: &str = "scenario";
    pub const INIT: &str = "init";
    pub const BATCHING: &str = "batching";
    pub const AUGMENT: &str = "augmentation";
    pub const PROBE: &str = "probe";
    pub const MEMORY: &str = "memory";
    pub const TRANSFER: &str = "transfer";
    pub const REPLAY: &str = "replay";
    pub const EVAL_MEMORY: &str = "eval_memory";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    root: u64,
}

impl SeedStreams {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// 64-bit seed for the stream `(name, index)`.
    pub fn seed(&self, name: &str, index: u64) -> u64 {
        let digest = self.digest(name, index);
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }

    pub fn rng(&self, name: &str, index: u64) -> Rng {
        Rng::from_seed(self.digest(name, index))
    }

    fn digest(&self, name: &str, index: u64) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.root.to_le_bytes());
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update(index.to_le_bytes());
        h.finalize().into()
    }
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
