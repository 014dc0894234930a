//! Small deterministic PRNG used by the simulator and the benchmark
//! generator. SplitMix64 is stable across platforms and releases, which the
//! reproducibility contracts require; `rand`'s seeded generators are not
//! guaranteed stable across versions.

/// SplitMix64 generator.
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

    /// Uniform value in `[0, n)`. Returns 0 for `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        if n == 0 {
            return 0;
        }
        (self.next_u64() % n as u64) as usize
    }

    /// Bernoulli draw with probability `num / den`.
    pub fn chance(&mut self, num: u64, den: u64) -> bool {
        debug_assert!(den > 0 && num <= den);
        self.next_u64() % den < num
    }

    /// Pick a reference from a non-empty slice.
    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }
}

/// Mix independent seed components into one stream seed.
///
/// Distinct task namespaces keep simulator streams independent (e.g.
/// construction-time paraphrases vs. held-out paraphrases).
pub fn mix(parts: &[u64]) -> u64 {
    let mut acc: u64 = 0x51_7c_c1_b7_27_22_0a_95;
    for &p in parts {
        acc ^= p;
        let mut rng = SplitMix64::new(acc);
        acc = rng.next_u64();
    }
    acc
}

/// Seed namespaces for the simulator task streams.
pub mod ns {
    pub const EXPANSION: u64 = 0x01;
    pub const ANCHORS: u64 = 0x02;
    pub const PROBES: u64 = 0x03;
    pub const SYNTHETIC_HELDOUT: u64 = 0x04;
    pub const ANSWER: u64 = 0x05;
    pub const VARIANT_BUILD: u64 = 0x06;
    pub const BENCHMARK: u64 = 0x07;
}
