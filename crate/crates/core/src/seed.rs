use sha2::{Digest, Sha256};

/// Derives a child seed from a master seed and an ordered list of labels.
///
/// Labels are length-prefixed before hashing, so `["ab", "c"]` and
/// `["a", "bc"]` give different seeds.
pub fn derive_seed<S: AsRef<str>>(master: u64, labels: &[S]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    for label in labels {
        let bytes = label.as_ref().as_bytes();
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Seed for replica `index` of the named stream.
pub fn replica_seed(master: u64, stream: &str, index: usize) -> u64 {
    derive_seed(master, &[stream, &index.to_string()])
}
