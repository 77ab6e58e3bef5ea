//! Deterministic, label-addressed random streams.
//!
//! Every source of randomness in a run derives from one root seed plus a
//! string label and optional integer parts (cycle, beam, segment). Streams
//! are independent: adding draws to one never perturbs another, and the
//! derivation is stable across processes and platforms.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Stream labels used by the engine.
pub mod labels {
    pub const REPLACEMENT: &str = "replacement";
    pub const ARCHIVE_SAMPLE: &str = "archive-sample";
    pub const GENERATION: &str = "generation";
    pub const LOOKAHEAD: &str = "lookahead";
    pub const MUTATION: &str = "mutation";
}

/// A reproducible random stream for `(seed, stream_label)`.
pub fn seeded_rng(seed: u64, stream_label: &str) -> ChaCha12Rng {
    substream_rng(seed, stream_label, &[])
}

/// A reproducible random stream addressed by label plus integer parts.
pub fn substream_rng(seed: u64, label: &str, parts: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::from_seed(derive_seed_bytes(seed, label, parts))
}

/// Derives a 64-bit substream seed, e.g. for a single generation request.
pub fn derive_substream(seed: u64, label: &str, parts: &[u64]) -> u64 {
    let bytes = derive_seed_bytes(seed, label, parts);
    u64::from_le_bytes(bytes[..8].try_into().expect("sha256 yields 32 bytes"))
}

fn derive_seed_bytes(seed: u64, label: &str, parts: &[u64]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update([0u8]); // label/parts boundary
    for part in parts {
        hasher.update(part.to_le_bytes());
    }
    hasher.finalize().into()
}
