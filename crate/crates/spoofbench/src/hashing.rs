//! Keyed 64-bit mixing used everywhere a deterministic pseudorandom value is
//! needed: toy-LM logits, green-list membership, keyed sampling, rewrite
//! prompt digests.
//!
//! All randomness in the library is derived from these functions, so a fixed
//! seed reproduces every artifact bit-for-bit.

/// SplitMix64 finalizer. Full-avalanche 64-bit mixer.
#[inline]
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 31;
    x
}

/// Incremental keyed hash over a word stream.
#[derive(Debug, Clone, Copy)]
pub struct HashChain(u64);

impl HashChain {
    pub fn new(key: u64) -> Self {
        HashChain(mix64(key))
    }

    #[inline]
    pub fn push(mut self, word: u64) -> Self {
        // Offset so that the word 0 is distinguishable from an absent word.
        self.0 = mix64(self.0 ^ word.wrapping_add(0x1000_0000_0000_0001));
        self
    }

    #[inline]
    pub fn finish(self) -> u64 {
        mix64(self.0)
    }
}

/// Map a 64-bit hash to the open interval (0, 1).
///
/// Divides by 2^64 and clamps one ulp away from both endpoints so callers can
/// take logs of both `u` and `1 - u`.
#[inline]
pub fn unit_open(h: u64) -> f64 {
    let u = (h as f64 + 0.5) / 18_446_744_073_709_551_616.0; // 2^64
    u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}
