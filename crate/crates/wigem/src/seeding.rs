//! Deterministic derivation of independent random streams.
//!
//! Every random draw in the pipeline comes from a stream derived from the
//! master seed plus a context path (stage name, group key, sim index, ...).
//! Streams are therefore independent of iteration order, which keeps runs
//! reproducible under any parallel schedule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn digest(seed: u64, parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        // Length prefixes keep distinct part lists from colliding.
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

/// A ChaCha8 stream addressed by `(seed, parts)`.
pub fn stream_rng(seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(seed, parts))
}

/// A derived sub-seed addressed by `(seed, parts)`.
pub fn stream_seed(seed: u64, parts: &[&[u8]]) -> u64 {
    u64::from_le_bytes(digest(seed, parts)[..8].try_into().unwrap())
}
