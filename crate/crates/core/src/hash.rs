//! Short content hashes embedded in artifacts so mismatched checkpoints,
//! datasets and feature files can be detected.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// First 16 hex digits of the SHA-256 of the value's JSON encoding.
pub fn json_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable value");
    bytes_hash(&bytes)
}

pub fn bytes_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_short() {
        let a = json_hash(&[1.0f64, 2.0]);
        assert_eq!(a.len(), 16);
        assert_eq!(a, json_hash(&[1.0f64, 2.0]));
        assert_ne!(a, json_hash(&[1.0f64, 2.5]));
    }
}
