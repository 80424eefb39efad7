use sha2::{Digest, Sha256};

/// Stable sub-stream derivation: hashes (master seed, tag) so every
/// component, epoch, batch, and mask slot gets an independent seed that is
/// reproducible from the master seed alone.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
}
