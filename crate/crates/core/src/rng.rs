//! Named, indexed random substreams derived from one seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Stream `(name, index)` of `seed`. Streams with different names or
/// indices are independent, and none depends on how much another consumed.
pub fn substream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut key = name.as_bytes().to_vec();
    key.extend_from_slice(&index.to_le_bytes());
    rng.set_stream(stable_hash(&key));
    rng
}
