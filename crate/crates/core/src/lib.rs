//! Face-voice association learning at desk scale.
//!
//! The pipeline aligns two synthetic modalities in a shared embedding space
//! with a mined multi-similarity objective over progressively coarsened
//! pseudo-labels, trains a small transformer fusion encoder for binary
//! matching on top, and evaluates verification, 1:2 matching and retrieval.

pub mod ablation;
pub mod clustering;
pub mod config;
pub mod encoders;
pub mod error;
pub mod evalsuite;
pub mod fusion;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod rng;
pub mod selftest;
pub mod synthworld;
pub mod trainer;

pub use error::{FaaError, Result};

/// SHA-256 over the canonical serialized parameter bytes; identifies a
/// model snapshot in reports.
pub fn model_hash(params: &model::ModelParams) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for (name, tensor) in params.named() {
        hasher.update(name.as_bytes());
        let (rows, cols) = tensor.shape();
        hasher.update((rows as u64).to_le_bytes());
        hasher.update((cols as u64).to_le_bytes());
        for v in tensor.data() {
            hasher.update(v.to_le_bytes());
        }
    }
    hex_string(&hasher.finalize())
}

/// SHA-256 of a byte slice as a lowercase hex string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex_string(&Sha256::digest(bytes))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
