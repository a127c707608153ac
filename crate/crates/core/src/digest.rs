//! Hex SHA-256 helpers.

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// First 16 hex digits of the SHA-256 digest.
pub fn short_hex(bytes: &[u8]) -> String {
    let mut s = sha256_hex(bytes);
    s.truncate(16);
    s
}
