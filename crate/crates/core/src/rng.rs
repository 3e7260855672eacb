//! Seeded, splittable random streams.
//!
//! Every random draw in the crate comes from a [`SeededRng`] keyed by a
//! `(master_seed, stream_id)` pair. The pair selects a ChaCha8 key and stream
//! directly, so two streams never share state and the draw sequence of one
//! stream does not depend on how many values were taken from another.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SeededRng {
    master_seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
        inner.set_stream(stream_id);
        Self {
            master_seed,
            stream_id,
            inner,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Stream for the `index`-th episode of a rollout seeded with `seed`.
    pub fn for_episode(seed: u64, index: usize) -> Self {
        Self::new(seed, index as u64)
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent 64-bit seed from a parent seed and a label.
///
/// Used to hand each oracle evaluation its own master seed.
pub fn derive_seed(parent: u64, label: u64) -> u64 {
    mix64(parent ^ mix64(label))
}
