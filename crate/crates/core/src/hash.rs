//! Content hashing for cache keys and reproducibility stamps.

use sha2::{Digest, Sha256};

use crate::model::RmabgInstance;

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Hash of an instance's canonical JSON serialization. Two instances get
/// the same hash exactly when their serialized forms are byte-identical.
pub fn instance_content_hash(inst: &RmabgInstance) -> String {
    sha256_hex(inst.to_json().as_bytes())
}
