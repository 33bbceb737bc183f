//! Named, reproducible random streams.
//!
//! Every consumer of randomness derives its own generator from the top-level
//! seed and a path of labels, e.g. `("bootstrap", asset, model)`. No code in
//! the crate touches an ambient RNG.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Seed plus a label path; `rng()` materializes the generator.
#[derive(Debug, Clone)]
pub struct SeedStream {
    seed: u64,
    path: Vec<String>,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, path: Vec::new() }
    }

    pub fn child(&self, label: impl ToString) -> Self {
        let mut path = self.path.clone();
        path.push(label.to_string());
        Self { seed: self.seed, path }
    }

    pub fn derive_seed(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for p in &self.path {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p.as_bytes());
        }
        let out = h.finalize();
        let mut b = [0u8; 8];
        b.copy_from_slice(&out[..8]);
        u64::from_le_bytes(b)
    }

    pub fn rng(&self) -> StreamRng {
        StreamRng::seed_from_u64(self.derive_seed())
    }
}

/// Generator for `(seed, index)`, used for per-path and per-tree streams.
pub fn indexed_rng(seed: u64, index: u64) -> StreamRng {
    SeedStream::new(seed).child(index).rng()
}
