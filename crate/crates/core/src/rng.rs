//! Portable seeded generator used for balanced sampling.
//!
//! SplitMix64 (Steele, Lea & Flood) is small enough to re-implement exactly in
//! any language, so a sample drawn here can be reproduced elsewhere from the
//! seed alone. Reference output for seed 0 starts with
//! `0xe220a8397b1dcdaf, 0x6e789e6aa1b965f4, 0x06c45d188009454f`.

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform integer in `0..bound` by rejection, so no value is favoured.
    ///
    /// Draws are rejected when they fall in the final partial block of
    /// `2^64 mod bound` values.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let rejected = bound.wrapping_neg() % bound; // 2^64 mod bound
        loop {
            let x = self.next_u64();
            if x <= u64::MAX - rejected {
                return x % bound;
            }
        }
    }

    /// Partial Fisher-Yates: moves a uniform `k`-subset to the front of
    /// `items` in draw order.
    pub fn partial_shuffle<T>(&mut self, items: &mut [T], k: usize) {
        let n = items.len();
        for i in 0..k.min(n) {
            let j = i + self.below((n - i) as u64) as usize;
            items.swap(i, j);
        }
    }
}
