//! SplitMix64 pseudo-random stream.
//!
//! Every random quantity in this crate (weights, test fixtures, token
//! streams) is drawn from this generator so that results are reproducible
//! from a single 64-bit seed, with no dependence on platform, thread count
//! or library version. The update and output functions are the reference
//! SplitMix64 constants.

/// Deterministic 64-bit generator with a fixed, documented output stream.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Next 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform f32 in [0, 1), using the top 24 bits of the stream.
    pub fn next_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 / (1u32 << 24) as f32
    }

    /// Uniform f32 in [-1, 1).
    pub fn next_symmetric_f32(&mut self) -> f32 {
        self.next_f32() * 2.0 - 1.0
    }

    /// Uniform usize in [0, bound). `bound` must be nonzero.
    pub fn next_below(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        (self.next_u64() % bound as u64) as usize
    }
}
