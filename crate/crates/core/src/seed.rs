//! Seed splitting: one master seed derives every stage and worker seed.
//!
//! `derive_seed(master, label)` is the first eight bytes (little endian) of
//! SHA-256 over the master seed's little-endian bytes followed by the UTF-8
//! label.

use sha2::{Digest, Sha256};

pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
}

/// Hex SHA-256 of raw bytes.
pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
