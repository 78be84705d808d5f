//! Named, reproducible random streams derived from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Generator for substream `(tag, index)` of `master_seed`.
///
/// The 256-bit ChaCha seed is the SHA-256 of the three inputs, so streams
/// with different tags or indices share no state.
pub fn rng_stream(master_seed: u64, stream_tag: &str, index: u64) -> Rng {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update((stream_tag.len() as u64).to_le_bytes());
    hasher.update(stream_tag.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}
