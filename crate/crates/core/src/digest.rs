use sha2::{Digest, Sha256};

/// Hex SHA-256 of the given parts, each length-prefixed so that part
/// boundaries are unambiguous.
pub fn hash_parts(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hex::encode(hasher.finalize())
}

/// First `n` hex characters of [`hash_parts`].
pub fn short_hash(parts: &[&[u8]], n: usize) -> String {
    let mut h = hash_parts(parts);
    h.truncate(n);
    h
}

pub fn digest_str(s: &str) -> String {
    short_hash(&[s.as_bytes()], 16)
}
