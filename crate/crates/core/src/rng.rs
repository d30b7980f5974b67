//! Counter-derived random substreams.
//!
//! Every consumer of randomness names its stream by a `(purpose, replicate,
//! particle)` triple. The triple is hashed together with the master seed into
//! a 256-bit ChaCha seed, so streams are independent of scheduling order and
//! of the number of worker threads. The hash is a fixed FNV-1a/splitmix64
//! construction rather than `std`'s hasher, which is not stable across
//! releases.

use rand_chacha::rand_core::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[inline]
fn fnv1a_bytes(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// splitmix64 finalizer; full-period bijection on u64.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed-derivation policy: one master seed, many named substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngPolicy {
    pub master_seed: u64,
}

impl RngPolicy {
    pub fn new(master_seed: u64) -> Self {
        RngPolicy { master_seed }
    }

    /// Stable 64-bit substream id for a `(purpose, replicate, particle)` triple.
    pub fn stream_id(&self, purpose: &str, replicate: u64, particle: u64) -> u64 {
        let mut h = fnv1a_bytes(FNV_OFFSET ^ self.master_seed, purpose.as_bytes());
        h = fnv1a_bytes(h, &replicate.to_le_bytes());
        h = fnv1a_bytes(h, &particle.to_le_bytes());
        splitmix64(h)
    }

    /// Dedicated generator for the named substream. Identical triples yield
    /// identical streams across runs and across parallelism degrees.
    pub fn stream(&self, purpose: &str, replicate: u64, particle: u64) -> ChaCha8Rng {
        let id = self.stream_id(purpose, replicate, particle);
        let mut seed = [0u8; 32];
        let mut s = id;
        for chunk in seed.chunks_exact_mut(8) {
            s = splitmix64(s ^ self.master_seed);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}
