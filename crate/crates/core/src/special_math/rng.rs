use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// A seeded random stream.
///
/// Equal `(seed, stream)` pairs give bit-identical draw sequences. Streams with
/// different indices under the same seed are independent ChaCha streams, which
/// is how parallel workers get deterministic, non-overlapping randomness.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::derive(seed, 0)
    }

    /// Stream number `index` under the master `seed`.
    pub fn derive(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(index);
        Self { seed, stream: index, rng }
    }

    /// A stream keyed by this stream's identity and `index`, for nesting
    /// (for example run -> sample).
    pub fn child(&self, index: u64) -> Self {
        Self::derive(mix(self.seed, self.stream), index)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }
}

/// A 64-bit seed derived from `seed` and `index`, for handing independent
/// seeds to sub-tasks.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix(seed, index)
}

fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
