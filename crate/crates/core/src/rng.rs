//! Named, independently reproducible random streams derived from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ChainRng = ChaCha8Rng;

// FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
fn stream_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Returns the generator for stream `name` under `master`.
///
/// Streams with different names never share state, so adding draws to one
/// component leaves every other component's draws unchanged.
pub fn substream(master: u64, name: &str) -> ChainRng {
    let mut rng = ChainRng::seed_from_u64(master);
    rng.set_stream(stream_id(name));
    rng
}

/// Derives a child seed, e.g. one per grid cell or replicate.
pub fn derive_seed(master: u64, name: &str) -> u64 {
    use rand::RngCore;
    substream(master, name).next_u64()
}
